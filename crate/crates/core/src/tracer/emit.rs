//! Graph output: DOT for viewing, JSON for tooling. Both follow the
//! graph's canonical order, so equal graphs give equal bytes.

use std::fmt::Write;

use serde::Serialize;

use super::{Loc, PointerGraph, Region, Source};
use crate::types::TypeMap;

fn region_label(r: &Region) -> String {
    match r {
        Region::Heap(id) => format!("heap #{id}"),
        Region::Static => "static".into(),
        Region::Stack { thread, frame } => format!("stack t{thread} f{frame}"),
        Region::Remote(id) => format!("remote #{id}"),
    }
}

fn loc_label(l: &Loc) -> String {
    match l {
        Loc::Reg { thread, n } => format!("t{thread}.r{n}"),
        Loc::Mem { addr } => format!("{addr:#x}"),
    }
}

pub fn to_dot(g: &PointerGraph, types: &TypeMap) -> String {
    let mut s = String::from("digraph pointers {\n  node [shape=box, fontname=monospace];\n");
    for (i, n) in g.nodes.iter().enumerate() {
        let ty = n.ty.map(|t| format!("\\n{}", types.name(t))).unwrap_or_default();
        let _ = writeln!(s, "  n{i} [label=\"{} @ {:#x}{ty}\"];", region_label(&n.region), n.base);
    }
    let mut regs = Vec::new();
    for e in &g.edges {
        if let Source::Reg { thread, n } = e.source {
            if !regs.contains(&(thread, n)) {
                regs.push((thread, n));
                let _ = writeln!(s, "  t{thread}r{n} [shape=plaintext, label=\"t{thread}.r{n}\"];");
            }
        }
    }
    for e in &g.edges {
        let from = match e.source {
            Source::Reg { thread, n } => format!("t{thread}r{n}"),
            Source::Node { node, .. } => format!("n{node}"),
        };
        let tail = match e.source {
            Source::Node { offset, .. } => format!("+{offset}"),
            Source::Reg { .. } => String::new(),
        };
        let style = if e.root { ", style=bold" } else { "" };
        let _ = writeln!(s, "  {from} -> n{} [label=\"{tail}->+{}\"{style}];", e.target, e.target_offset);
    }
    s.push_str("}\n");
    s
}

#[derive(Serialize)]
struct JsonNode<'a> {
    id: usize,
    region: String,
    base: String,
    size: u64,
    #[serde(rename = "type")]
    ty: Option<&'a str>,
}

#[derive(Serialize)]
struct JsonEdge<'a> {
    source: String,
    source_offset: u64,
    target: String,
    target_offset: u64,
    value: String,
    pointee: &'a str,
    root: bool,
    location: Option<String>,
}

#[derive(Serialize)]
struct JsonGraph<'a> {
    nodes: Vec<JsonNode<'a>>,
    edges: Vec<JsonEdge<'a>>,
}

pub fn to_json(g: &PointerGraph, types: &TypeMap) -> String {
    let nodes = g
        .nodes
        .iter()
        .enumerate()
        .map(|(id, n)| JsonNode {
            id,
            region: region_label(&n.region),
            base: format!("{:#x}", n.base),
            size: n.size,
            ty: n.ty.map(|t| types.name(t)),
        })
        .collect();
    let edges = g
        .edges
        .iter()
        .map(|e| {
            let (source, source_offset) = match e.source {
                Source::Reg { thread, n } => (format!("t{thread}.r{n}"), 0),
                Source::Node { node, offset } => (format!("n{node}"), offset),
            };
            JsonEdge {
                source,
                source_offset,
                target: format!("n{}", e.target),
                target_offset: e.target_offset,
                value: format!("{:#x}", e.value),
                pointee: types.name(e.pointee),
                root: e.root,
                location: e.loc.as_ref().map(loc_label),
            }
        })
        .collect();
    let mut s = serde_json::to_string_pretty(&JsonGraph { nodes, edges }).expect("graph serializes");
    s.push('\n');
    s
}
