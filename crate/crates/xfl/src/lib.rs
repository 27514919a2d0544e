//! Federated learning runtime: transport, protocol drivers, task
//! orchestration and file formats on top of `xfl-core`.

pub mod io;
pub mod orchestration;
pub mod protocol;
pub mod transport;
