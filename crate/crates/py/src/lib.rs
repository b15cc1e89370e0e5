//! Python bindings: matrices, packing, the three GEMM variants, the latency
//! model and the tuner.

use pyo3::exceptions::{PyIOError, PyValueError};
use pyo3::prelude::*;

use ngemm::io;
use ngemm::layout::Permutation;
use ngemm::{
    ElemKind, Error, GemmPath, GemmProblem, IsaProfile, KernelShape, MatrixBuf, PackedWeight, SatMode, TileConfig,
};

fn err(e: Error) -> PyErr {
    match e {
        Error::Io(e) => PyIOError::new_err(e.to_string()),
        e => PyValueError::new_err(e.to_string()),
    }
}

fn parse_kind(s: &str) -> PyResult<ElemKind> {
    ElemKind::parse(s).ok_or_else(|| PyValueError::new_err(format!("unknown element kind '{s}'")))
}

fn parse_isa(s: &str) -> PyResult<IsaProfile> {
    s.parse().map_err(err)
}

fn parse_mode(s: &str) -> PyResult<SatMode> {
    SatMode::parse(s).ok_or_else(|| PyValueError::new_err(format!("unknown mode '{s}' (sat, exact)")))
}

fn shape_for(isa: &str, kind: ElemKind) -> PyResult<KernelShape> {
    ngemm::kernel_shape(parse_isa(isa)?, kind).map_err(err)
}

/// Row-major integer matrix.
#[pyclass(name = "Matrix", module = "ngemm_py", frozen)]
struct PyMatrix(MatrixBuf);

#[pymethods]
impl PyMatrix {
    /// Builds a matrix from nested lists; values must fit `kind`.
    #[staticmethod]
    fn from_rows(kind: &str, rows: Vec<Vec<i64>>) -> PyResult<Self> {
        let kind = parse_kind(kind)?;
        let (lo, hi) = kind.range();
        let cols = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != cols) {
            return Err(PyValueError::new_err("ragged rows"));
        }
        let flat: Vec<i64> = rows.into_iter().flatten().collect();
        if let Some(&bad) = flat.iter().find(|&&x| x < lo || x > hi) {
            return Err(PyValueError::new_err(format!("{bad} does not fit {kind}")));
        }
        let n = flat.len() / cols.max(1);
        let m = match kind {
            ElemKind::U8 => MatrixBuf::new(n, cols, flat.iter().map(|&x| x as u8).collect()),
            ElemKind::I8 => MatrixBuf::new(n, cols, flat.iter().map(|&x| x as i8).collect()),
            ElemKind::I16 => MatrixBuf::new(n, cols, flat.iter().map(|&x| x as i16).collect()),
            ElemKind::I32 => MatrixBuf::new(n, cols, flat.iter().map(|&x| x as i32).collect()),
        };
        m.map(PyMatrix).map_err(err)
    }

    #[staticmethod]
    fn read(path: &str) -> PyResult<Self> {
        io::mat_read(path).map(PyMatrix).map_err(err)
    }

    fn write(&self, path: &str) -> PyResult<()> {
        io::mat_write(&self.0, path).map_err(err)
    }

    #[getter]
    fn rows(&self) -> usize {
        self.0.rows()
    }

    #[getter]
    fn cols(&self) -> usize {
        self.0.cols()
    }

    #[getter]
    fn kind(&self) -> String {
        self.0.kind().to_string()
    }

    fn checksum(&self) -> i64 {
        self.0.checksum()
    }

    fn to_list(&self) -> Vec<Vec<i64>> {
        (0..self.0.rows())
            .map(|r| (0..self.0.cols()).map(|c| self.0.get_i64(r, c)).collect())
            .collect()
    }

    fn __eq__(&self, other: &Self) -> bool {
        self.0 == other.0
    }

    fn __repr__(&self) -> String {
        format!("Matrix({}, {}x{})", self.0.kind(), self.0.rows(), self.0.cols())
    }
}

/// Weight matrix in the packed kernel layout.
#[pyclass(name = "PackedWeight", module = "ngemm_py", frozen)]
struct PyPacked(PackedWeight);

#[pymethods]
impl PyPacked {
    #[staticmethod]
    fn read(path: &str) -> PyResult<Self> {
        io::packed_read(path).map(PyPacked).map_err(err)
    }

    fn write(&self, path: &str) -> PyResult<()> {
        io::packed_write(&self.0, path).map_err(err)
    }

    /// `(w, h, v)` of the kernel shape.
    #[getter]
    fn shape(&self) -> (usize, usize, usize) {
        let s = self.0.shape();
        (s.w(), s.h(), s.v())
    }

    /// `(tm, tn, tk, permutation)`.
    #[getter]
    fn tile(&self) -> (usize, usize, usize, String) {
        let t = self.0.tile();
        (t.tm, t.tn, t.tk, t.permutation.to_string())
    }

    #[getter]
    fn orig_dims(&self) -> (usize, usize) {
        (self.0.m_orig(), self.0.k_orig())
    }

    #[getter]
    fn padded_dims(&self) -> (usize, usize) {
        (self.0.m_pad(), self.0.k_pad())
    }

    fn unpack(&self) -> PyResult<PyMatrix> {
        ngemm::unpack_weights(&self.0).map(PyMatrix).map_err(err)
    }

    fn __repr__(&self) -> String {
        format!(
            "PackedWeight({}x{} -> {}x{}, tile {})",
            self.0.m_orig(),
            self.0.k_orig(),
            self.0.m_pad(),
            self.0.k_pad(),
            self.0.tile()
        )
    }
}

#[pyfunction]
#[pyo3(signature = (kind, rows, cols, seed, lo=None, hi=None))]
fn mat_random(kind: &str, rows: usize, cols: usize, seed: u64, lo: Option<i64>, hi: Option<i64>) -> PyResult<PyMatrix> {
    let kind = parse_kind(kind)?;
    let (min, max) = kind.range();
    ngemm::mat_random(kind, rows, cols, seed, lo.unwrap_or(min), hi.unwrap_or(max))
        .map(PyMatrix)
        .map_err(err)
}

/// `(w, h, v)` for an ISA profile and weight element kind.
#[pyfunction]
fn kernel_shape(isa: &str, kind: &str) -> PyResult<(usize, usize, usize)> {
    let s = shape_for(isa, parse_kind(kind)?)?;
    Ok((s.w(), s.h(), s.v()))
}

#[pyfunction]
#[pyo3(signature = (a, isa, tile=None, perm="mnk"))]
fn pack(a: &PyMatrix, isa: &str, tile: Option<(usize, usize, usize)>, perm: &str) -> PyResult<PyPacked> {
    let shape = shape_for(isa, a.0.kind())?;
    let perm: Permutation = perm.parse().map_err(err)?;
    let cfg = match tile {
        Some((tm, tn, tk)) => TileConfig::new(tm, tn, tk, perm),
        None => TileConfig {
            permutation: perm,
            ..TileConfig::default_for(&shape)
        },
    };
    ngemm::pack_weights(&a.0, shape, cfg).map(PyPacked).map_err(err)
}

#[pyfunction]
#[pyo3(signature = (a, b, saturating=false))]
fn gemm_ref(a: &PyMatrix, b: &PyMatrix, saturating: bool) -> PyResult<PyMatrix> {
    let problem = GemmProblem::from_operands(&a.0, &b.0).map_err(err)?;
    let c = if saturating {
        ngemm::gemm_ref_saturating(&a.0, &b.0, &problem)
    } else {
        ngemm::gemm_ref(&a.0, &b.0, &problem)
    };
    c.map(PyMatrix).map_err(err)
}

#[pyfunction]
#[pyo3(signature = (a, b, isa, mode="sat"))]
fn gemm_conventional(a: &PyMatrix, b: &PyMatrix, isa: &str, mode: &str) -> PyResult<PyMatrix> {
    let shape = shape_for(isa, a.0.kind())?;
    ngemm::gemm_conventional(&a.0, &b.0, &shape, parse_mode(mode)?)
        .map(PyMatrix)
        .map_err(err)
}

#[pyfunction]
#[pyo3(signature = (packed, b, mode="sat"))]
fn gemm_ngemm(packed: &PyPacked, b: &PyMatrix, mode: &str) -> PyResult<PyMatrix> {
    ngemm::gemm_ngemm(&packed.0, &b.0, parse_mode(mode)?)
        .map(PyMatrix)
        .map_err(err)
}

fn point(m: u64, k: u64, w: u32) -> PyResult<ngemm::ProblemPoint> {
    ngemm::ProblemPoint::new(m, k, w).map_err(err)
}

fn params(c1: f64, c2: f64) -> PyResult<ngemm::CostParams> {
    ngemm::CostParams::new(c1, c2).map_err(err)
}

#[pyfunction]
fn latency_conventional(m: u64, k: u64, w: u32, c1: f64, c2: f64) -> PyResult<f64> {
    Ok(ngemm::latency_conventional(&point(m, k, w)?, &params(c1, c2)?))
}

#[pyfunction]
fn latency_ngemm(m: u64, k: u64, w: u32, c1: f64, c2: f64) -> PyResult<f64> {
    Ok(ngemm::latency_ngemm(&point(m, k, w)?, &params(c1, c2)?))
}

#[pyfunction]
fn speedup_ratio(m: u64, k: u64, w: u32, c1: f64, c2: f64) -> PyResult<f64> {
    Ok(ngemm::speedup_ratio(&point(m, k, w)?, &params(c1, c2)?))
}

/// Fits `(c1, c2)` to samples `(m, k, w, t_conventional, t_ngemm)`.
/// Returns a dict with c1, c2, c3, r2_ngemm and r2_conventional.
#[pyfunction]
fn fit_constants(py: Python<'_>, samples: Vec<(u64, u64, u32, f64, f64)>) -> PyResult<Py<pyo3::types::PyDict>> {
    let samples = samples
        .into_iter()
        .map(|(m, k, w, conventional, ngemm)| {
            Ok(ngemm::FitSample {
                point: point(m, k, w)?,
                conventional,
                ngemm,
            })
        })
        .collect::<PyResult<Vec<_>>>()?;
    let r = ngemm::fit_constants(&samples).map_err(err)?;
    let d = pyo3::types::PyDict::new(py);
    d.set_item("c1", r.params.c1())?;
    d.set_item("c2", r.params.c2())?;
    d.set_item("c3", r.params.c3())?;
    d.set_item("r2_ngemm", r.r2_ngemm)?;
    d.set_item("r2_conventional", r.r2_conventional)?;
    Ok(d.unbind())
}

/// Tunes one problem over the default space and returns the store line.
#[pyfunction]
#[pyo3(signature = (m, n, k, kind="u8i8", isa="v256", repeats=3, warmup=1))]
fn tune(m: usize, n: usize, k: usize, kind: &str, isa: &str, repeats: usize, warmup: usize) -> PyResult<String> {
    let path = GemmPath::parse(kind).ok_or_else(|| PyValueError::new_err(format!("unknown kind '{kind}'")))?;
    let problem = GemmProblem::for_path(path, m, n, k).map_err(err)?;
    let rec = ngemm::tune(&problem, &ngemm::TuneSpace::default(), parse_isa(isa)?, repeats, warmup).map_err(err)?;
    Ok(rec.to_string())
}

/// ISA profile with the widest native path on this host.
#[pyfunction]
fn host_isa() -> String {
    ngemm::kernels::host_isa().to_string()
}

#[pymodule]
fn ngemm_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyMatrix>()?;
    m.add_class::<PyPacked>()?;
    m.add_function(wrap_pyfunction!(mat_random, m)?)?;
    m.add_function(wrap_pyfunction!(kernel_shape, m)?)?;
    m.add_function(wrap_pyfunction!(pack, m)?)?;
    m.add_function(wrap_pyfunction!(gemm_ref, m)?)?;
    m.add_function(wrap_pyfunction!(gemm_conventional, m)?)?;
    m.add_function(wrap_pyfunction!(gemm_ngemm, m)?)?;
    m.add_function(wrap_pyfunction!(latency_conventional, m)?)?;
    m.add_function(wrap_pyfunction!(latency_ngemm, m)?)?;
    m.add_function(wrap_pyfunction!(speedup_ratio, m)?)?;
    m.add_function(wrap_pyfunction!(fit_constants, m)?)?;
    m.add_function(wrap_pyfunction!(tune, m)?)?;
    m.add_function(wrap_pyfunction!(host_isa, m)?)?;
    Ok(())
}
