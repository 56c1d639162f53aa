//! Tools built on the tracer: leak detection and swapping.

pub mod leak;
pub mod store;
pub mod swap;

pub use leak::{leakcheck, Leak, LeakReport};
pub use store::{DirStore, MemoryStore, RemoteStore, StoredChunk};
pub use swap::{swapdemo, EvictionPolicy, OldestFirst, SwapError, SwapEvent, SwapManager, SwapRun};
