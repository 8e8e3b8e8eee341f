//! Security service: collects coordination-node state and violations from
//! a live simulation and serves them, plus runtime policy changes, over
//! HTTP/JSON.

pub mod api;
pub mod live;
pub mod model;
pub mod store;

use std::net::SocketAddr;
use std::sync::Arc;

pub use api::{router, AppState, ROLE_HEADER};
pub use live::{LiveHandle, LiveOptions, LiveSim, Pace, Status};
pub use model::{CnUpdate, RiskInfo, RiskModel, RunClock, Timestamp, ViolationRecord};
pub use store::{Store, StoreError};

/// Binds `addr` and serves until the process is stopped.
pub async fn serve(addr: SocketAddr, state: AppState) -> std::io::Result<()> {
    let listener = tokio::net::TcpListener::bind(addr).await?;
    tracing::info!(addr = %listener.local_addr()?, "security service listening");
    axum::serve(listener, router(state)).await
}

/// Convenience for callers that own both halves.
pub fn state(store: Arc<Store>, live: &LiveSim) -> AppState {
    AppState {
        store,
        live: live.handle(),
    }
}
