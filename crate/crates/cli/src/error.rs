use std::fmt;
use std::path::Path;

use vinescan_core::augment::AugmentError;
use vinescan_core::eval::EvalError;
use vinescan_core::fusion::FusionError;
use vinescan_core::raster::RasterError;
use vinescan_core::registration::RegistrationError;
use vinescan_core::segmap::SegmapError;

/// Process exit status classes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExitKind {
    Internal = 1,
    BadInput = 2,
    RegistrationFailed = 3,
}

#[derive(Debug)]
pub struct CliError {
    pub kind: ExitKind,
    pub stage: String,
    pub message: String,
}

impl CliError {
    pub fn new(kind: ExitKind, stage: &str, message: impl Into<String>) -> Self {
        Self {
            kind,
            stage: stage.to_string(),
            message: message.into(),
        }
    }

    pub fn input(stage: &str, message: impl Into<String>) -> Self {
        Self::new(ExitKind::BadInput, stage, message)
    }

    pub fn internal(stage: &str, message: impl Into<String>) -> Self {
        Self::new(ExitKind::Internal, stage, message)
    }

    pub fn code(&self) -> i32 {
        self.kind as i32
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} failed: {}", self.stage, self.message)
    }
}

impl std::error::Error for CliError {}

/// Adds the failing stage to a library error.
pub trait StageContext<T> {
    fn stage(self, stage: &str) -> Result<T, CliError>;
}

fn raster_kind(e: &RasterError) -> ExitKind {
    match e {
        RasterError::Io(_) => ExitKind::Internal,
        _ => ExitKind::BadInput,
    }
}

impl<T> StageContext<T> for Result<T, RasterError> {
    fn stage(self, stage: &str) -> Result<T, CliError> {
        self.map_err(|e| CliError::new(raster_kind(&e), stage, e.to_string()))
    }
}

impl<T> StageContext<T> for Result<T, RegistrationError> {
    fn stage(self, stage: &str) -> Result<T, CliError> {
        self.map_err(|e| {
            let kind = match &e {
                RegistrationError::Failed(_)
                | RegistrationError::InsufficientTexture { .. }
                | RegistrationError::EstimationFailed(_) => ExitKind::RegistrationFailed,
                RegistrationError::Input(_)
                | RegistrationError::Config(_)
                | RegistrationError::Feature(_) => ExitKind::BadInput,
                RegistrationError::Raster(r) => raster_kind(r),
                _ => ExitKind::Internal,
            };
            CliError::new(kind, stage, e.to_string())
        })
    }
}

impl<T> StageContext<T> for Result<T, SegmapError> {
    fn stage(self, stage: &str) -> Result<T, CliError> {
        self.map_err(|e| {
            let kind = match &e {
                SegmapError::Tile { .. } => ExitKind::Internal,
                SegmapError::Raster(r) => raster_kind(r),
                _ => ExitKind::BadInput,
            };
            CliError::new(kind, stage, e.to_string())
        })
    }
}

impl<T> StageContext<T> for Result<T, FusionError> {
    fn stage(self, stage: &str) -> Result<T, CliError> {
        self.map_err(|e| {
            let kind = match &e {
                FusionError::Raster(r) => raster_kind(r),
                _ => ExitKind::BadInput,
            };
            CliError::new(kind, stage, e.to_string())
        })
    }
}

impl<T> StageContext<T> for Result<T, EvalError> {
    fn stage(self, stage: &str) -> Result<T, CliError> {
        self.map_err(|e| {
            let kind = match &e {
                EvalError::Csv(_) => ExitKind::Internal,
                _ => ExitKind::BadInput,
            };
            CliError::new(kind, stage, e.to_string())
        })
    }
}

impl<T> StageContext<T> for Result<T, AugmentError> {
    fn stage(self, stage: &str) -> Result<T, CliError> {
        self.map_err(|e| CliError::input(stage, e.to_string()))
    }
}

/// Fails with a bad-input error naming `path` when it does not exist.
pub fn require_file(stage: &str, path: &Path) -> Result<(), CliError> {
    if path.is_file() {
        Ok(())
    } else {
        Err(CliError::input(stage, format!("input file not found: {}", path.display())))
    }
}
