use alloc::string::String;
use core::fmt;

pub type Result<T> = core::result::Result<T, Error>;

#[derive(Debug, Clone, PartialEq)]
pub enum Error {
    /// Two tensors (or a tensor and a declared shape) disagree.
    ShapeMismatch {
        op: &'static str,
        expected: String,
        found: String,
    },
    /// A class index is outside `0..num_classes`.
    LabelOutOfRange { label: usize, num_classes: usize },
    /// A parameter entry is absent from a [`ParamSet`](crate::ParamSet).
    MissingParam(String),
    /// Input to a divergence is not a probability distribution.
    NotADistribution(&'static str),
    /// Background substitution was asked to run on an image without a mask.
    MissingMask,
    /// No donor image of a different class is available.
    NoDonor { label: usize },
    /// Source data cannot support the requested split or pool.
    InsufficientData(String),
    /// A configuration value violates its documented range.
    InvalidConfig(String),
}

impl fmt::Display for Error {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Error::ShapeMismatch {
                op,
                expected,
                found,
            } => write!(f, "{op}: shape mismatch, expected {expected}, found {found}"),
            Error::LabelOutOfRange { label, num_classes } => {
                write!(f, "label {label} out of range for {num_classes} classes")
            }
            Error::MissingParam(name) => write!(f, "parameter `{name}` missing"),
            Error::NotADistribution(why) => write!(f, "not a probability distribution: {why}"),
            Error::MissingMask => f.write_str("background substitution requires a foreground mask"),
            Error::NoDonor { label } => {
                write!(f, "no donor image with a class other than {label}")
            }
            Error::InsufficientData(msg) => write!(f, "insufficient data: {msg}"),
            Error::InvalidConfig(msg) => write!(f, "invalid configuration: {msg}"),
        }
    }
}

impl core::error::Error for Error {}

pub(crate) fn shape_err(op: &'static str, expected: &[usize], found: &[usize]) -> Error {
    Error::ShapeMismatch {
        op,
        expected: alloc::format!("{expected:?}"),
        found: alloc::format!("{found:?}"),
    }
}
