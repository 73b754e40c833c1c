pub mod io;
pub mod lp;
pub mod market;
pub mod policy;
pub mod sim;
pub mod stability;
