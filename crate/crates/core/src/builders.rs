//! Problem-file descriptors for linear operators and shared parameter
//! parsing helpers.

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::{FbfError, Result};
use crate::imaging;
use crate::linalg::DenseMatrix;
use crate::linop::{self, LinOp};

/// Either one number broadcast to every coordinate or an explicit vector.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(untagged)]
pub enum ScalarOrVec {
    Scalar(f64),
    Vector(Vec<f64>),
}

impl ScalarOrVec {
    pub fn expand(&self, dim: usize, what: &str) -> Result<Vec<f64>> {
        match self {
            ScalarOrVec::Scalar(v) => Ok(vec![*v; dim]),
            ScalarOrVec::Vector(v) if v.len() == dim => Ok(v.clone()),
            ScalarOrVec::Vector(v) => Err(FbfError::Spec(format!(
                "{what}: expected {dim} entries, got {}",
                v.len()
            ))),
        }
    }
}

/// Operators in problem files: a dense row-major array of rows, or a named
/// matrix-free builder.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(untagged)]
pub enum OpDesc {
    Dense(Vec<Vec<f64>>),
    Builder {
        builder: String,
        #[serde(default)]
        params: Value,
    },
}

/// Names accepted in `{"builder": name}`.
pub const OP_BUILDERS: &[&str] = &[
    "identity",
    "zero",
    "scaled_identity",
    "gradient",
    "second_gradient",
    "haar",
    "box_blur",
    "gaussian_blur",
    "compose",
];

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct DimParams {
    dim: usize,
    #[serde(default = "one")]
    scale: f64,
}

fn one() -> f64 {
    1.0
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct ZeroParams {
    rows: usize,
    cols: usize,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct GridParams {
    height: usize,
    width: usize,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct BlurParams {
    height: usize,
    width: usize,
    #[serde(default = "one_usize")]
    radius: usize,
    sigma: Option<f64>,
}

fn one_usize() -> usize {
    1
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct ComposeParams {
    outer: OpDesc,
    inner: OpDesc,
}

impl OpDesc {
    pub fn dense(m: &DenseMatrix) -> Self {
        OpDesc::Dense(m.to_rows())
    }

    pub fn builder(name: &str, params: Value) -> Self {
        OpDesc::Builder {
            builder: name.to_string(),
            params,
        }
    }

    pub fn build(&self) -> Result<LinOp> {
        match self {
            OpDesc::Dense(rows) => Ok(LinOp::dense(DenseMatrix::from_rows(rows)?)),
            OpDesc::Builder { builder, params } => match builder.as_str() {
                "identity" => {
                    let p: DimParams = parse_params(params)?;
                    positive(p.dim, "identity dim")?;
                    Ok(LinOp::identity(p.dim))
                }
                "scaled_identity" => {
                    let p: DimParams = parse_params(params)?;
                    positive(p.dim, "scaled_identity dim")?;
                    Ok(LinOp::scaled(p.scale, LinOp::identity(p.dim)))
                }
                "zero" => {
                    let p: ZeroParams = parse_params(params)?;
                    positive(p.rows, "zero rows")?;
                    positive(p.cols, "zero cols")?;
                    Ok(LinOp::zero(p.rows, p.cols))
                }
                "gradient" => {
                    let p: GridParams = parse_params(params)?;
                    imaging::gradient_op(p.height, p.width)
                }
                "second_gradient" => {
                    let p: GridParams = parse_params(params)?;
                    imaging::second_gradient_op(p.height, p.width)
                }
                "haar" => {
                    let p: GridParams = parse_params(params)?;
                    imaging::haar_analysis_op(p.height, p.width)
                }
                "box_blur" => {
                    let p: BlurParams = parse_params(params)?;
                    if p.sigma.is_some() {
                        return Err(FbfError::Config("box_blur takes no sigma".into()));
                    }
                    imaging::box_blur_op(p.height, p.width, p.radius)
                }
                "gaussian_blur" => {
                    let p: BlurParams = parse_params(params)?;
                    let sigma = p
                        .sigma
                        .ok_or_else(|| FbfError::Config("gaussian_blur needs sigma".into()))?;
                    imaging::gaussian_blur_op(p.height, p.width, p.radius, sigma)
                }
                "compose" => {
                    let p: ComposeParams = parse_params(params)?;
                    linop::compose(&p.outer.build()?, &p.inner.build()?)
                }
                other => Err(FbfError::Config(format!(
                    "unknown operator builder '{other}' (known: {})",
                    OP_BUILDERS.join(", ")
                ))),
            },
        }
    }
}

fn positive(v: usize, what: &str) -> Result<()> {
    if v == 0 {
        Err(FbfError::Spec(format!("{what} must be positive")))
    } else {
        Ok(())
    }
}

/// Deserializes a `params` object, treating `null` as `{}` and reporting
/// failures with their path inside the object.
pub fn parse_params<T: DeserializeOwned>(params: &Value) -> Result<T> {
    let v = if params.is_null() {
        Value::Object(Default::default())
    } else {
        params.clone()
    };
    serde_path_to_error::deserialize(v).map_err(|e| FbfError::Schema {
        path: format!("params/{}", pointer_of(e.path())),
        message: e.inner().to_string(),
    })
}

/// Renders a serde path (`a.b[0]`) as a JSON-pointer-style suffix (`a/b/0`).
pub fn pointer_of(path: &serde_path_to_error::Path) -> String {
    path.iter()
        .filter_map(|seg| match seg {
            serde_path_to_error::Segment::Seq { index } => Some(index.to_string()),
            serde_path_to_error::Segment::Map { key } => Some(key.clone()),
            serde_path_to_error::Segment::Enum { variant } => Some(variant.clone()),
            serde_path_to_error::Segment::Unknown => None,
        })
        .collect::<Vec<_>>()
        .join("/")
}
