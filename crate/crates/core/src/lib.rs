pub mod crypto;
pub mod detection;
pub mod election;
pub mod keymgmt;
pub mod model;
pub mod sim;
