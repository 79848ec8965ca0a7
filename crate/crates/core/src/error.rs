use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("configuration error: {0}")]
    Config(String),

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("invalid state: {0}")]
    State(String),

    #[error("gradient norm {norm:e} below floor {floor:e}; curvature undefined")]
    SingularPoint { norm: f64, floor: f64 },

    #[error("no valid samples in batch ({skipped} skipped as singular)")]
    EmptyBatch { skipped: usize },

    #[error("{path}:{line}: {msg}")]
    Parse {
        path: PathBuf,
        line: usize,
        msg: String,
    },

    #[error("{path}: missing vertex normals; oriented input is required")]
    MissingNormals { path: PathBuf },

    #[error("degenerate input: {0}")]
    Degenerate(String),

    #[error("{stage} diverged at epoch {epoch}: loss is {loss}")]
    Divergence {
        stage: &'static str,
        epoch: usize,
        loss: f64,
    },

    #[error("non-manifold mesh: {} edge(s) shared by more than two triangles, first {:?}", .0.len(), .0.first())]
    NonManifold(Vec<(usize, usize)>),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: {source}")]
    Json {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
