pub mod authlog;
pub mod cluster;
pub mod crypto;
pub mod lhe;
pub mod logsync;
pub mod punc;
pub mod sdstore;
pub mod stats;
pub mod wire;
