//! Discrete-event simulator for a 433 MHz smart-home star network, its
//! gateway, and a WAN rendezvous service.

pub mod camera;
pub mod client;
pub mod device;
pub mod gateway;
pub mod home;
pub mod mac;
pub mod net;
pub mod rendezvous;
pub mod report;
pub mod rf;
pub mod scenario;
pub mod sim;
pub mod wan;
