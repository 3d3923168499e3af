//! The benchmark corpus: kernel files on disk plus direct reference
//! implementations used as a second oracle.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use thiserror::Error;

use crate::interp::{EvalError, Value};
use crate::ir::{parse_kernel, KernelDef, ParseError, SizeEnv, SortError, Symbol};

/// Kernel names in the default corpus.
pub const NAMES: [&str; 16] = [
    "2mm",
    "atax",
    "doitgen",
    "gemm",
    "gemver",
    "gesummv",
    "jacobi1d",
    "mvt",
    "1mm",
    "axpy",
    "blur1d",
    "gemv",
    "memset",
    "slim-2mm",
    "stencil2d",
    "vsum",
];

#[derive(Debug, Error)]
pub enum KernelError {
    #[error("unknown kernel `{0}`")]
    UnknownKernel(String),
    #[error("reading {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("parsing {path}: {source}")]
    Parse { path: PathBuf, source: ParseError },
    #[error("kernel {name}: {source}")]
    Sort { name: String, source: SortError },
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error(transparent)]
    Eval(#[from] EvalError),
}

/// A directory of `<name>.kernel` files.
#[derive(Clone, Debug)]
pub struct Corpus {
    dir: PathBuf,
}

impl Default for Corpus {
    fn default() -> Self {
        Corpus::open(Corpus::default_dir())
    }
}

impl Corpus {
    pub fn default_dir() -> PathBuf {
        Path::new(env!("CARGO_MANIFEST_DIR")).join("corpus")
    }

    pub fn open(dir: impl Into<PathBuf>) -> Self {
        Corpus { dir: dir.into() }
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    /// Names of all kernel files, sorted.
    pub fn names(&self) -> Result<Vec<String>, KernelError> {
        let rd = std::fs::read_dir(&self.dir).map_err(|source| KernelError::Io { path: self.dir.clone(), source })?;
        let mut out: Vec<String> = rd
            .filter_map(|e| e.ok())
            .filter_map(|e| {
                let p = e.path();
                (p.extension()? == "kernel").then(|| p.file_stem()?.to_str().map(str::to_owned)).flatten()
            })
            .collect();
        out.sort();
        Ok(out)
    }

    /// Parsed and sort-checked kernel.
    pub fn load(&self, name: &str) -> Result<KernelDef, KernelError> {
        let path = self.dir.join(format!("{name}.kernel"));
        if !path.is_file() {
            return Err(KernelError::UnknownKernel(name.to_string()));
        }
        let text = std::fs::read_to_string(&path).map_err(|source| KernelError::Io { path: path.clone(), source })?;
        let k = parse_kernel(&text).map_err(|source| KernelError::Parse { path, source })?;
        k.result_sort().map_err(|source| KernelError::Sort { name: name.to_string(), source })?;
        Ok(k)
    }
}

/// Loads a kernel from the default corpus.
pub fn load(name: &str) -> Result<KernelDef, KernelError> {
    Corpus::default().load(name)
}

type Vector = Vec<f64>;
type Matrix = Vec<Vec<f64>>;

struct Args<'a> {
    inputs: &'a BTreeMap<Symbol, Value<f64>>,
}

impl Args<'_> {
    fn get(&self, name: &str) -> Result<&Value<f64>, KernelError> {
        self.inputs.get(name).ok_or_else(|| KernelError::ShapeMismatch(format!("missing input `{name}`")))
    }

    fn s(&self, name: &str) -> Result<f64, KernelError> {
        Ok(self.get(name)?.scalar()?)
    }

    fn v(&self, name: &str) -> Result<Vector, KernelError> {
        to_vec(self.get(name)?)
    }

    fn m(&self, name: &str) -> Result<Matrix, KernelError> {
        self.get(name)?.array()?.iter().map(to_vec).collect()
    }
}

fn to_vec(v: &Value<f64>) -> Result<Vector, KernelError> {
    Ok(v.array()?.iter().map(|x| x.scalar()).collect::<Result<_, _>>()?)
}

fn vval(v: Vector) -> Value<f64> {
    Value::vector(&v)
}

fn mval(m: Matrix) -> Value<f64> {
    Value::matrix(&m)
}

fn dims(m: &Matrix) -> (usize, usize) {
    (m.len(), m.first().map_or(0, Vec::len))
}

fn matvec(a: &Matrix, x: &[f64]) -> Result<Vector, KernelError> {
    a.iter()
        .map(|row| {
            if row.len() != x.len() {
                return Err(KernelError::ShapeMismatch(format!("row of {} times vector of {}", row.len(), x.len())));
            }
            Ok(row.iter().zip(x).map(|(p, q)| p * q).sum())
        })
        .collect()
}

fn transpose(a: &Matrix) -> Matrix {
    let (r, c) = dims(a);
    (0..c).map(|j| (0..r).map(|i| a[i][j]).collect()).collect()
}

fn matmul(a: &Matrix, b: &Matrix) -> Result<Matrix, KernelError> {
    let bt = transpose(b);
    a.iter().map(|row| matvec(&bt, row)).collect()
}

fn lincomb(a: f64, x: &[f64], b: f64, y: &[f64]) -> Vector {
    x.iter().zip(y).map(|(p, q)| a * p + b * q).collect()
}

fn mlincomb(a: f64, x: &Matrix, b: f64, y: &Matrix) -> Matrix {
    x.iter().zip(y).map(|(p, q)| lincomb(a, p, b, q)).collect()
}

fn size(sizes: &SizeEnv, name: &str) -> Result<usize, KernelError> {
    sizes.get(name).map(|n| *n as usize).ok_or_else(|| KernelError::ShapeMismatch(format!("missing size `{name}`")))
}

/// Direct implementation of each corpus kernel's math, independent of the
/// IR interpreter.
pub fn reference_eval(
    name: &str,
    inputs: &BTreeMap<Symbol, Value<f64>>,
    sizes: &SizeEnv,
) -> Result<Value<f64>, KernelError> {
    let a = Args { inputs };
    Ok(match name {
        "axpy" => vval(lincomb(a.s("alpha")?, &a.v("X")?, 1.0, &a.v("Y")?)),
        "memset" => vval(vec![0.0; size(sizes, "N")?]),
        "vsum" => Value::Scalar(a.v("xs")?.iter().sum()),
        "gemv" => vval(lincomb(a.s("alpha")?, &matvec(&a.m("A")?, &a.v("B")?)?, a.s("beta")?, &a.v("C")?)),
        "gesummv" => {
            let x = a.v("X")?;
            vval(lincomb(a.s("alpha")?, &matvec(&a.m("A")?, &x)?, a.s("beta")?, &matvec(&a.m("B")?, &x)?))
        }
        "atax" => {
            let m = a.m("A")?;
            vval(matvec(&transpose(&m), &matvec(&m, &a.v("X")?)?)?)
        }
        "mvt" => {
            let m = a.m("A")?;
            let x1 = lincomb(1.0, &a.v("X1")?, 1.0, &matvec(&m, &a.v("Y1")?)?);
            let x2 = lincomb(1.0, &a.v("X2")?, 1.0, &matvec(&transpose(&m), &a.v("Y2")?)?);
            Value::Tup(Box::new(vval(x1)), Box::new(vval(x2)))
        }
        "1mm" => mval(matmul(&a.m("A")?, &a.m("B")?)?),
        "gemm" => {
            let ab = matmul(&a.m("A")?, &a.m("B")?)?;
            mval(mlincomb(a.s("alpha")?, &ab, a.s("beta")?, &a.m("C")?))
        }
        "2mm" => {
            let ab = matmul(&a.m("A")?, &a.m("B")?)?;
            let tmp = mlincomb(a.s("alpha")?, &ab, 0.0, &ab);
            mval(mlincomb(1.0, &matmul(&tmp, &a.m("C")?)?, a.s("beta")?, &a.m("D")?))
        }
        "slim-2mm" => mval(matmul(&matmul(&a.m("A")?, &a.m("B")?)?, &a.m("C")?)?),
        "jacobi1d" | "blur1d" => {
            let x = a.v("A")?;
            let w = if name == "jacobi1d" { [0.33333; 3] } else { [0.25, 0.5, 0.25] };
            let n = size(sizes, "N")?;
            if x.len() != n + 2 {
                return Err(KernelError::ShapeMismatch(format!("{name} input of length {}", x.len())));
            }
            vval(
                (0..n)
                    .map(|i| {
                        if name == "jacobi1d" {
                            w[0] * (x[i] + x[i + 1] + x[i + 2])
                        } else {
                            w[0] * x[i] + w[1] * x[i + 1] + w[2] * x[i + 2]
                        }
                    })
                    .collect(),
            )
        }
        "stencil2d" => {
            let m = a.m("A")?;
            let (n, k) = (size(sizes, "N")?, size(sizes, "M")?);
            mval(
                (0..n)
                    .map(|i| {
                        (0..k)
                            .map(|j| {
                                0.2 * (m[i][j + 1] + m[i + 1][j] + m[i + 1][j + 1] + m[i + 1][j + 2] + m[i + 2][j + 1])
                            })
                            .collect()
                    })
                    .collect(),
            )
        }
        "doitgen" => {
            let t = a
                .get("A")?
                .array()?
                .iter()
                .map(|s| s.array()?.iter().map(to_vec).collect())
                .collect::<Result<Vec<Matrix>, KernelError>>()?;
            let b = a.m("B")?;
            Value::Arr(
                t.iter().map(|slab| Ok(mval(matmul(slab, &transpose(&b))?))).collect::<Result<_, KernelError>>()?,
            )
        }
        "gemver" => {
            let (m, n) = (a.m("A")?, size(sizes, "N")?);
            let (u1, v1, u2, v2) = (a.v("U1")?, a.v("V1")?, a.v("U2")?, a.v("V2")?);
            let ahat: Matrix =
                (0..n).map(|i| (0..n).map(|j| m[i][j] + u1[i] * v1[j] + u2[i] * v2[j]).collect()).collect();
            let (x, y, z, w) = (a.v("X")?, a.v("Y")?, a.v("Z")?, a.v("W")?);
            let beta = a.s("beta")?;
            let x2: Vector =
                (0..n).map(|i| x[i] + (0..n).map(|j| beta * ahat[j][i] * y[j]).sum::<f64>() + z[i]).collect();
            let alpha = a.s("alpha")?;
            vval((0..n).map(|i| w[i] + (0..n).map(|j| alpha * ahat[i][j] * x2[j]).sum::<f64>()).collect())
        }
        other => return Err(KernelError::UnknownKernel(other.to_string())),
    })
}
