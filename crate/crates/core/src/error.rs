use core::fmt;

/// Errors reported by the core operations.
#[derive(Debug, Clone, PartialEq)]
pub enum Error {
    /// Image dimensions are zero, exceed the supported range, or their
    /// product overflows the addressable size.
    BadDimensions { width: usize, height: usize },
    /// Pixel buffer length does not match `width * height`.
    DataLength { expected: usize, actual: usize },
    /// A value that must be finite is NaN or infinite.
    NonFinite,
    /// Kernel size is even or out of the supported range.
    BadKernelSize { size: usize },
    /// Two images that must share dimensions do not.
    SizeMismatch,
    /// The data weight `lambda` must be strictly positive.
    NonPositiveLambda,
    /// Poisson data (counts) must be non-negative.
    NegativeData,
    /// Influence-function grid is invalid (empty, non-equidistant centers,
    /// or non-positive width).
    BadInfluenceGrid,
    /// A diffusion model must contain at least one stage.
    EmptyModel,
    /// Stage filter/influence lists are empty or of unequal length.
    BadStage,
    /// Backprop tape does not match the model or sample it is used with.
    TapeMismatch,
    /// Training dataset is empty.
    EmptyDataset,
    /// Loss or gradient became non-finite during training.
    NonFiniteLoss { iteration: usize },
    /// Poisson mean must be non-negative.
    NegativeMean,
    /// Cannot rescale an all-zero image to a peak value.
    ZeroImage,
    /// Requested peak must be strictly positive.
    NonPositivePeak,
    /// Image is smaller than the SSIM window.
    WindowTooLarge { window: usize, width: usize, height: usize },
    /// No model was supplied for the requested peak value.
    MissingModel { peak_milli: i64 },
    /// A linear solve failed (matrix not positive definite).
    SingularSystem,
}

impl fmt::Display for Error {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Error::BadDimensions { width, height } => {
                write!(f, "unsupported image dimensions {}x{}", width, height)
            }
            Error::DataLength { expected, actual } => {
                write!(f, "pixel buffer length {} does not match {}", actual, expected)
            }
            Error::NonFinite => write!(f, "value must be finite"),
            Error::BadKernelSize { size } => {
                write!(f, "kernel size {} must be odd and within the supported range", size)
            }
            Error::SizeMismatch => write!(f, "image dimensions do not match"),
            Error::NonPositiveLambda => write!(f, "lambda must be strictly positive"),
            Error::NegativeData => write!(f, "observed counts must be non-negative"),
            Error::BadInfluenceGrid => write!(f, "invalid influence-function grid"),
            Error::EmptyModel => write!(f, "diffusion model has no stages"),
            Error::BadStage => write!(f, "stage filters and influences are empty or mismatched"),
            Error::TapeMismatch => write!(f, "backprop tape does not match model or sample"),
            Error::EmptyDataset => write!(f, "training dataset is empty"),
            Error::NonFiniteLoss { iteration } => {
                write!(f, "non-finite loss or gradient at iteration {}", iteration)
            }
            Error::NegativeMean => write!(f, "Poisson mean must be non-negative"),
            Error::ZeroImage => write!(f, "image is identically zero"),
            Error::NonPositivePeak => write!(f, "peak must be strictly positive"),
            Error::WindowTooLarge { window, width, height } => {
                write!(f, "image {}x{} is smaller than the {}x{} window", width, height, window, window)
            }
            Error::MissingModel { peak_milli } => {
                write!(f, "no model available for peak {}", (*peak_milli as f64) / 1000.0)
            }
            Error::SingularSystem => write!(f, "linear system is singular"),
        }
    }
}

impl core::error::Error for Error {}

pub type Result<T> = core::result::Result<T, Error>;
