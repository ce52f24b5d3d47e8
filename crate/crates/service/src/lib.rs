//! HTTP service for the operator workflow: submit an inquiry, poll for
//! ranked results, and send feedback that triggers retraining.

pub mod app;
pub mod config;
pub mod http;

use std::sync::Arc;

pub use app::{App, AppError};
pub use config::{ConfigError, ServiceConfig, TrainingSettings};
pub use http::router;

/// Binds to `config.bind` and serves until the process is stopped.
pub async fn serve(config: ServiceConfig) -> Result<(), Box<dyn std::error::Error + Send + Sync>> {
    let bind = config.bind.clone();
    let app: Arc<App> = App::from_config(config)?;
    let listener = tokio::net::TcpListener::bind(&bind).await?;
    tracing::info!(address = %listener.local_addr()?, model = ?app.model_version(), "serving");
    axum::serve(listener, router(app)).await?;
    Ok(())
}
