pub mod ingest;
pub mod imaging;
pub mod model;
pub mod ssl;
pub mod eval;
