use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::Json;
use perfsieve::active_loop::LoopError;
use perfsieve::agreement::AgreementError;
use perfsieve::corpus::CorpusError;
use perfsieve::evaluation::EvalError;
use perfsieve::features::FeatureError;
use perfsieve::self_training::SelfTrainError;
use perfsieve::store::StoreError;
use perfsieve::svm::SvmError;
use serde_json::json;

/// An error with the HTTP status it maps to. The CLI maps 4xx to exit code 1
/// and everything else to 2.
#[derive(Debug, Clone, PartialEq)]
pub struct AppError {
    pub status: StatusCode,
    pub message: String,
    /// Set for stale criteria submissions.
    pub current_version: Option<u32>,
}

pub type AppResult<T> = Result<T, AppError>;

impl AppError {
    pub fn new(status: StatusCode, message: impl Into<String>) -> Self {
        Self { status, message: message.into(), current_version: None }
    }

    pub fn bad_request(message: impl Into<String>) -> Self {
        Self::new(StatusCode::BAD_REQUEST, message)
    }

    pub fn unprocessable(message: impl Into<String>) -> Self {
        Self::new(StatusCode::UNPROCESSABLE_ENTITY, message)
    }

    pub fn conflict(message: impl Into<String>) -> Self {
        Self::new(StatusCode::CONFLICT, message)
    }

    pub fn not_found(message: impl Into<String>) -> Self {
        Self::new(StatusCode::NOT_FOUND, message)
    }

    pub fn forbidden(message: impl Into<String>) -> Self {
        Self::new(StatusCode::FORBIDDEN, message)
    }

    pub fn internal(message: impl Into<String>) -> Self {
        Self::new(StatusCode::INTERNAL_SERVER_ERROR, message)
    }

    pub fn is_user_error(&self) -> bool {
        self.status.is_client_error()
    }

    pub fn body(&self) -> serde_json::Value {
        let mut body = json!({ "error": self.message, "status": self.status.as_u16() });
        if let Some(v) = self.current_version {
            body["current_version"] = json!(v);
        }
        body
    }
}

impl std::fmt::Display for AppError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.message)
    }
}

impl std::error::Error for AppError {}

impl IntoResponse for AppError {
    fn into_response(self) -> Response {
        (self.status, Json(self.body())).into_response()
    }
}

impl From<LoopError> for AppError {
    fn from(e: LoopError) -> Self {
        let message = e.to_string();
        match e {
            LoopError::UnknownAnnotator(_) => Self::forbidden(message),
            LoopError::StaleCriteria { current, .. } => {
                Self { current_version: Some(current), ..Self::conflict(message) }
            }
            LoopError::IterationClosed(_)
            | LoopError::AlreadyLabeled(_)
            | LoopError::SeedingClosed
            | LoopError::Incomplete(_)
            | LoopError::PoolExhausted
            | LoopError::NoModel(_) => Self::conflict(message),
            LoopError::Replay(_) => Self::internal(message),
            LoopError::Train(e) => e.into(),
            LoopError::Eval(e) => e.into(),
            LoopError::SelfTrain(e) => e.into(),
            LoopError::Agreement(e) => e.into(),
            _ => Self::unprocessable(message),
        }
    }
}

impl From<SvmError> for AppError {
    fn from(e: SvmError) -> Self {
        match e {
            SvmError::ModelFile(_) => Self::internal(e.to_string()),
            _ => Self::unprocessable(e.to_string()),
        }
    }
}

impl From<EvalError> for AppError {
    fn from(e: EvalError) -> Self {
        Self::unprocessable(e.to_string())
    }
}

impl From<SelfTrainError> for AppError {
    fn from(e: SelfTrainError) -> Self {
        match e {
            SelfTrainError::Leakage(_) => Self::internal(e.to_string()),
            _ => Self::unprocessable(e.to_string()),
        }
    }
}

impl From<AgreementError> for AppError {
    fn from(e: AgreementError) -> Self {
        Self::unprocessable(e.to_string())
    }
}

impl From<CorpusError> for AppError {
    fn from(e: CorpusError) -> Self {
        match e {
            CorpusError::Io(_) => Self::internal(e.to_string()),
            _ => Self::unprocessable(e.to_string()),
        }
    }
}

impl From<FeatureError> for AppError {
    fn from(e: FeatureError) -> Self {
        match e {
            FeatureError::EmptyCorpus | FeatureError::InvalidConfig(_) => Self::unprocessable(e.to_string()),
            _ => Self::internal(e.to_string()),
        }
    }
}

impl From<StoreError> for AppError {
    fn from(e: StoreError) -> Self {
        match e {
            StoreError::Loop(e) => e.into(),
            StoreError::NotAProject(_) => Self::not_found(e.to_string()),
            StoreError::NoCorpus => Self::conflict(e.to_string()),
            _ => Self::internal(e.to_string()),
        }
    }
}

impl From<std::io::Error> for AppError {
    fn from(e: std::io::Error) -> Self {
        Self::internal(e.to_string())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn loop_errors_map_to_statuses() {
        let stale: AppError = LoopError::StaleCriteria { submitted: 1, current: 3 }.into();
        assert_eq!(stale.status, StatusCode::CONFLICT);
        assert_eq!(stale.body()["current_version"], 3);
        let who: AppError = LoopError::UnknownAnnotator("x".into()).into();
        assert_eq!(who.status, StatusCode::FORBIDDEN);
        let closed: AppError = LoopError::IterationClosed(2).into();
        assert_eq!(closed.status, StatusCode::CONFLICT);
        let bad: AppError = LoopError::InvalidCertainty(7).into();
        assert_eq!(bad.status, StatusCode::UNPROCESSABLE_ENTITY);
        let single: AppError = LoopError::Train(SvmError::Degenerate { positives: 3, negatives: 0 }).into();
        assert_eq!(single.status, StatusCode::UNPROCESSABLE_ENTITY);
        assert!(single.is_user_error());
    }
}
