pub mod apps;
pub mod codegen;
pub mod frontend;
pub mod image;
pub mod isa;
pub mod mapfmt;
pub mod oracle;
pub mod tracer;
pub mod transport;
pub mod types;
pub mod vm;
