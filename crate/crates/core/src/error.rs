use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    /// An integrator left the neighbourhood of the state space.
    #[error("numerical divergence{} at step {step}: {detail}", path_suffix(*.path))]
    Divergence {
        path: Option<usize>,
        step: usize,
        detail: String,
    },

    #[error("outcome has vanishing probability (amplitude norm {norm:e})")]
    ImpossibleOutcome { norm: f64 },

    /// `rate * dt` exceeded the resolution guard of the thinning sampler.
    #[error("time step too coarse for jump intensity: rate*dt = {0:.4}")]
    IntensityResolution(f64),

    #[error("config error: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

fn path_suffix(path: Option<usize>) -> String {
    match path {
        Some(p) => format!(" on path {p}"),
        None => String::new(),
    }
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }

    /// Attach a path index to a divergence error; other variants pass through.
    pub fn on_path(self, index: usize) -> Self {
        match self {
            Error::Divergence { step, detail, .. } => Error::Divergence {
                path: Some(index),
                step,
                detail,
            },
            other => other,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
