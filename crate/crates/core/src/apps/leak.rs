//! Leak detection: live chunks the precise trace cannot reach.

use std::fmt;

use serde::Serialize;

use crate::image::ProgramImage;
use crate::tracer::{reachable_chunks, trace_graph, TraceError};
use crate::types::TypeId;
use crate::vm::MachineView;

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct Leak {
    pub chunk: u32,
    pub size: u64,
    pub ty: TypeId,
    pub type_name: String,
    /// pc of the allocating instruction.
    pub site: u32,
    pub site_function: Option<String>,
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize)]
pub struct LeakReport {
    pub leaks: Vec<Leak>,
    pub live_chunks: usize,
    pub leaked_bytes: u64,
}

impl LeakReport {
    pub fn is_clean(&self) -> bool {
        self.leaks.is_empty()
    }

    pub fn chunk_ids(&self) -> Vec<u32> {
        self.leaks.iter().map(|l| l.chunk).collect()
    }
}

pub fn leakcheck(view: &dyn MachineView, img: &ProgramImage) -> Result<LeakReport, TraceError> {
    let g = trace_graph(view, img)?;
    let reach = reachable_chunks(&g, true);
    let mut live = view.live_chunks();
    live.sort_by_key(|c| c.id);
    let leaks: Vec<Leak> = live
        .iter()
        .filter(|c| !reach.contains(&c.id))
        .map(|c| Leak {
            chunk: c.id,
            size: c.size,
            ty: c.ty,
            type_name: img.types.name(c.ty).to_string(),
            site: c.site,
            site_function: img.function_at(c.site).map(|f| img.functions[f as usize].name.clone()),
        })
        .collect();
    Ok(LeakReport { leaked_bytes: leaks.iter().map(|l| l.size).sum(), live_chunks: live.len(), leaks })
}

impl fmt::Display for LeakReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.leaks.is_empty() {
            return writeln!(f, "no leaks ({} live chunks)", self.live_chunks);
        }
        writeln!(f, "{:>6}  {:>8}  {:<16}  {:>6}  function", "chunk", "bytes", "type", "site")?;
        for l in &self.leaks {
            writeln!(
                f,
                "{:>6}  {:>8}  {:<16}  {:>6}  {}",
                l.chunk,
                l.size,
                l.type_name,
                l.site,
                l.site_function.as_deref().unwrap_or("?")
            )?;
        }
        writeln!(f, "{} leaked chunks, {} bytes, of {} live", self.leaks.len(), self.leaked_bytes, self.live_chunks)
    }
}
