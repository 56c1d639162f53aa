//! The type map: layout descriptors for every guest type a program mentions.
//!
//! Pointer locations reported by the location maps carry a pointee type id.
//! The tracer uses the descriptor behind that id to find further pointers
//! inside the object, including union variants (checked against the
//! discriminant) and dynamic arrays (sized by their length word).

use std::collections::HashMap;
use std::fmt;

use serde::{Deserialize, Serialize};

pub const WORD: u64 = 8;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct TypeId(pub u32);

impl fmt::Display for TypeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "t{}", self.0)
    }
}

pub const INT: TypeId = TypeId(0);
pub const BOOL: TypeId = TypeId(1);

#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Field {
    pub offset: u32,
    pub ty: TypeId,
}

#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Variant {
    pub tag: u32,
    pub ty: TypeId,
}

#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum TypeDesc {
    Scalar { size: u32 },
    Pointer { pointee: TypeId },
    Struct { size: u32, fields: Vec<Field> },
    /// Discriminant word at `disc_offset`, one data word at `data_offset`.
    /// Tag 0 means "no variant stored yet"; real variants start at 1.
    Union { size: u32, disc_offset: u32, data_offset: u32, variants: Vec<Variant> },
    Array { elem: TypeId, count: u32 },
    /// Element count in the chunk's first word, elements from byte 8.
    DynArray { elem: TypeId },
}

/// A pointer-holding word inside an object, relative to the object base.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum PointerSlot {
    Plain { offset: u64, pointee: TypeId },
    /// Holds a pointer only while the discriminant equals `tag`.
    InUnion { offset: u64, disc_offset: u64, tag: u32, pointee: TypeId },
}

impl PointerSlot {
    pub fn offset(&self) -> u64 {
        match self {
            PointerSlot::Plain { offset, .. } | PointerSlot::InUnion { offset, .. } => *offset,
        }
    }

    pub fn pointee(&self) -> TypeId {
        match self {
            PointerSlot::Plain { pointee, .. } | PointerSlot::InUnion { pointee, .. } => *pointee,
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct TypeMap {
    descs: Vec<TypeDesc>,
    names: Vec<String>,
    #[serde(skip)]
    interned: HashMap<TypeDesc, TypeId>,
}

impl PartialEq for TypeMap {
    fn eq(&self, other: &Self) -> bool {
        self.descs == other.descs && self.names == other.names
    }
}

impl Eq for TypeMap {}

impl Default for TypeMap {
    fn default() -> Self {
        Self::new()
    }
}

impl TypeMap {
    /// A map holding only the two builtin scalars.
    pub fn new() -> Self {
        let mut map = TypeMap { descs: Vec::new(), names: Vec::new(), interned: HashMap::new() };
        let int = map.intern(TypeDesc::Scalar { size: 8 }, "int");
        debug_assert_eq!(int, INT);
        // bool is a distinct scalar; a separate push keeps it from interning onto int.
        map.descs.push(TypeDesc::Scalar { size: 8 });
        map.names.push("bool".into());
        map
    }

    /// Rebuilds a map from raw parts (decoder path).
    pub fn from_parts(descs: Vec<TypeDesc>, names: Vec<String>) -> Self {
        let mut interned = HashMap::new();
        for (i, d) in descs.iter().enumerate().skip(2) {
            if !matches!(d, TypeDesc::Struct { .. } | TypeDesc::Union { .. }) {
                interned.entry(d.clone()).or_insert(TypeId(i as u32));
            }
        }
        TypeMap { descs, names, interned }
    }

    pub fn intern(&mut self, desc: TypeDesc, name: &str) -> TypeId {
        if let Some(id) = self.interned.get(&desc) {
            return *id;
        }
        let id = TypeId(self.descs.len() as u32);
        // Structs and unions are nominal: two declarations with the same layout stay distinct.
        if !matches!(desc, TypeDesc::Struct { .. } | TypeDesc::Union { .. }) {
            self.interned.insert(desc.clone(), id);
        }
        self.descs.push(desc);
        self.names.push(name.to_string());
        id
    }

    /// Reserves an id for a nominal type whose layout is filled in later.
    pub fn reserve(&mut self, name: &str) -> TypeId {
        let id = TypeId(self.descs.len() as u32);
        self.descs.push(TypeDesc::Struct { size: 0, fields: Vec::new() });
        self.names.push(name.to_string());
        id
    }

    pub fn define(&mut self, id: TypeId, desc: TypeDesc) {
        self.descs[id.0 as usize] = desc;
    }

    pub fn pointer_to(&mut self, pointee: TypeId) -> TypeId {
        let name = format!("*{}", self.name(pointee));
        self.intern(TypeDesc::Pointer { pointee }, &name)
    }

    pub fn get(&self, id: TypeId) -> Option<&TypeDesc> {
        self.descs.get(id.0 as usize)
    }

    pub fn desc(&self, id: TypeId) -> &TypeDesc {
        &self.descs[id.0 as usize]
    }

    pub fn name(&self, id: TypeId) -> &str {
        self.names.get(id.0 as usize).map(String::as_str).unwrap_or("?")
    }

    pub fn len(&self) -> usize {
        self.descs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.descs.is_empty()
    }

    pub fn descs(&self) -> &[TypeDesc] {
        &self.descs
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn iter(&self) -> impl Iterator<Item = (TypeId, &TypeDesc)> {
        self.descs.iter().enumerate().map(|(i, d)| (TypeId(i as u32), d))
    }

    pub fn is_pointer(&self, id: TypeId) -> bool {
        matches!(self.get(id), Some(TypeDesc::Pointer { .. }))
    }

    pub fn pointee(&self, id: TypeId) -> Option<TypeId> {
        match self.get(id) {
            Some(TypeDesc::Pointer { pointee }) => Some(*pointee),
            _ => None,
        }
    }

    /// Byte size; `None` for dynamic arrays, whose size lives in the chunk.
    pub fn size_of(&self, id: TypeId) -> Option<u64> {
        match self.desc(id) {
            TypeDesc::Scalar { size } => Some(*size as u64),
            TypeDesc::Pointer { .. } => Some(WORD),
            TypeDesc::Struct { size, .. } | TypeDesc::Union { size, .. } => Some(*size as u64),
            TypeDesc::Array { elem, count } => self.size_of(*elem).map(|s| s * *count as u64),
            TypeDesc::DynArray { .. } => None,
        }
    }

    /// Every pointer-holding word of a sized object, in offset order.
    pub fn pointer_slots(&self, id: TypeId) -> Vec<PointerSlot> {
        let mut out = Vec::new();
        self.collect_slots(id, 0, &mut out);
        out
    }

    fn collect_slots(&self, id: TypeId, base: u64, out: &mut Vec<PointerSlot>) {
        match self.desc(id) {
            TypeDesc::Scalar { .. } | TypeDesc::DynArray { .. } => {}
            TypeDesc::Pointer { pointee } => out.push(PointerSlot::Plain { offset: base, pointee: *pointee }),
            TypeDesc::Struct { fields, .. } => {
                for f in fields {
                    self.collect_slots(f.ty, base + f.offset as u64, out);
                }
            }
            TypeDesc::Union { disc_offset, data_offset, variants, .. } => {
                for v in variants {
                    if let Some(pointee) = self.pointee(v.ty) {
                        out.push(PointerSlot::InUnion {
                            offset: base + *data_offset as u64,
                            disc_offset: base + *disc_offset as u64,
                            tag: v.tag,
                            pointee,
                        });
                    }
                }
            }
            TypeDesc::Array { elem, count } => {
                let size = self.size_of(*elem).unwrap_or(0);
                let inner = self.pointer_slots(*elem);
                if inner.is_empty() {
                    return;
                }
                for i in 0..*count as u64 {
                    for s in &inner {
                        out.push(shift(s, base + i * size));
                    }
                }
            }
        }
    }

    /// Types of every sub-object that starts exactly at `offset` inside an
    /// object of type `id` (the object itself first). Used to check that an
    /// interior pointer has a pointee type that exists at its target.
    pub fn types_at(&self, id: TypeId, offset: u64) -> Vec<TypeId> {
        let mut out = Vec::new();
        self.collect_types_at(id, offset, &mut out);
        out
    }

    fn collect_types_at(&self, id: TypeId, offset: u64, out: &mut Vec<TypeId>) {
        if offset == 0 {
            out.push(id);
        }
        match self.desc(id) {
            TypeDesc::Struct { fields, .. } => {
                for f in fields {
                    let start = f.offset as u64;
                    let size = self.size_of(f.ty).unwrap_or(0);
                    if offset >= start && offset < start + size.max(1) {
                        self.collect_types_at(f.ty, offset - start, out);
                    }
                }
            }
            TypeDesc::Array { elem, count } => {
                let size = self.size_of(*elem).unwrap_or(0);
                if size > 0 && offset < size * *count as u64 {
                    self.collect_types_at(*elem, offset % size, out);
                }
            }
            TypeDesc::DynArray { elem } => {
                let size = self.size_of(*elem).unwrap_or(0);
                if size > 0 && offset >= WORD {
                    self.collect_types_at(*elem, (offset - WORD) % size, out);
                }
            }
            TypeDesc::Union { data_offset, variants, .. } => {
                // Union payloads are only reachable through `match`, never by address.
                let _ = (data_offset, variants);
            }
            TypeDesc::Scalar { .. } | TypeDesc::Pointer { .. } => {}
        }
    }

    /// Checks the acyclicity and reference invariants. Returns the first
    /// offending type id.
    pub fn validate(&self) -> Result<(), TypeId> {
        let n = self.descs.len();
        for (id, d) in self.iter() {
            let refs: Vec<TypeId> = match d {
                TypeDesc::Scalar { .. } => vec![],
                TypeDesc::Pointer { pointee } => vec![*pointee],
                TypeDesc::Struct { fields, .. } => fields.iter().map(|f| f.ty).collect(),
                TypeDesc::Union { variants, .. } => variants.iter().map(|v| v.ty).collect(),
                TypeDesc::Array { elem, .. } | TypeDesc::DynArray { elem } => vec![*elem],
            };
            if refs.iter().any(|r| r.0 as usize >= n) {
                return Err(id);
            }
        }
        // containment cycles (not through pointers)
        let mut state = vec![0u8; n];
        fn visit(map: &TypeMap, id: TypeId, state: &mut [u8]) -> bool {
            let i = id.0 as usize;
            if state[i] == 1 {
                return false;
            }
            if state[i] == 2 {
                return true;
            }
            state[i] = 1;
            let ok = match map.desc(id) {
                TypeDesc::Struct { fields, .. } => fields.iter().all(|f| visit(map, f.ty, state)),
                TypeDesc::Union { variants, .. } => variants.iter().all(|v| visit(map, v.ty, state)),
                TypeDesc::Array { elem, .. } | TypeDesc::DynArray { elem } => visit(map, *elem, state),
                _ => true,
            };
            state[i] = 2;
            ok
        }
        for i in 0..n {
            if !visit(self, TypeId(i as u32), &mut state) {
                return Err(TypeId(i as u32));
            }
        }
        Ok(())
    }
}

pub fn shift(slot: &PointerSlot, by: u64) -> PointerSlot {
    match slot {
        PointerSlot::Plain { offset, pointee } => PointerSlot::Plain { offset: offset + by, pointee: *pointee },
        PointerSlot::InUnion { offset, disc_offset, tag, pointee } => PointerSlot::InUnion {
            offset: offset + by,
            disc_offset: disc_offset + by,
            tag: *tag,
            pointee: *pointee,
        },
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn list_types() -> (TypeMap, TypeId, TypeId) {
        let mut m = TypeMap::new();
        let node = m.reserve("Node");
        let pnode = m.pointer_to(node);
        m.define(
            node,
            TypeDesc::Struct { size: 16, fields: vec![Field { offset: 0, ty: INT }, Field { offset: 8, ty: pnode }] },
        );
        (m, node, pnode)
    }

    #[test]
    fn builtin_ids_are_fixed() {
        let m = TypeMap::new();
        assert_eq!(m.name(INT), "int");
        assert_eq!(m.name(BOOL), "bool");
        assert_ne!(m.desc(INT), &TypeDesc::Pointer { pointee: INT });
    }

    #[test]
    fn struct_pointer_slots() {
        let (m, node, _) = list_types();
        assert_eq!(m.pointer_slots(node), vec![PointerSlot::Plain { offset: 8, pointee: node }]);
        assert_eq!(m.size_of(node), Some(16));
        assert!(m.validate().is_ok());
    }

    #[test]
    fn pointer_types_are_interned() {
        let (mut m, node, pnode) = list_types();
        assert_eq!(m.pointer_to(node), pnode);
    }

    #[test]
    fn arrays_and_unions() {
        let (mut m, node, pnode) = list_types();
        let arr = m.intern(TypeDesc::Array { elem: pnode, count: 3 }, "[*Node; 3]");
        let slots = m.pointer_slots(arr);
        assert_eq!(slots.iter().map(|s| s.offset()).collect::<Vec<_>>(), vec![0, 8, 16]);
        let u = m.reserve("Cell");
        m.define(
            u,
            TypeDesc::Union {
                size: 16,
                disc_offset: 0,
                data_offset: 8,
                variants: vec![Variant { tag: 1, ty: INT }, Variant { tag: 2, ty: pnode }],
            },
        );
        assert_eq!(
            m.pointer_slots(u),
            vec![PointerSlot::InUnion { offset: 8, disc_offset: 0, tag: 2, pointee: node }]
        );
    }

    #[test]
    fn interior_types() {
        let (mut m, node, pnode) = list_types();
        assert_eq!(m.types_at(node, 8), vec![pnode]);
        assert_eq!(m.types_at(node, 0), vec![node, INT]);
        let dynarr = m.intern(TypeDesc::DynArray { elem: node }, "dynarray Node");
        assert_eq!(m.types_at(dynarr, 8 + 16 + 8), vec![pnode]);
        assert!(m.types_at(dynarr, 4).is_empty());
    }

    #[test]
    fn containment_cycle_detected() {
        let mut m = TypeMap::new();
        let a = m.reserve("A");
        m.define(a, TypeDesc::Struct { size: 8, fields: vec![Field { offset: 0, ty: a }] });
        assert_eq!(m.validate(), Err(a));
    }
}
