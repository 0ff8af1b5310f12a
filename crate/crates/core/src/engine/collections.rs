use std::collections::HashMap;

use crate::qvm::{ClassId, ObjId};

/// Per-exact-class registry of tracked objects. Entries are weak: they never
/// keep an object alive, and [`Collections::remove`] is driven by the VM's
/// reclamation notices.
#[derive(Clone, Debug, Default)]
pub struct Collections {
    by_class: Vec<Vec<ObjId>>,
    /// Object → (class, position in its class list).
    index: HashMap<ObjId, (ClassId, usize)>,
    peak: usize,
}

impl Collections {
    pub fn new(class_count: usize) -> Self {
        Collections {
            by_class: vec![Vec::new(); class_count],
            index: HashMap::new(),
            peak: 0,
        }
    }

    /// Returns false if the object was already tracked.
    pub fn insert(&mut self, obj: ObjId, class: ClassId) -> bool {
        if self.index.contains_key(&obj) {
            return false;
        }
        let list = &mut self.by_class[class.index()];
        self.index.insert(obj, (class, list.len()));
        list.push(obj);
        self.peak = self.peak.max(self.index.len());
        true
    }

    /// Returns the class the object was tracked under.
    pub fn remove(&mut self, obj: ObjId) -> Option<ClassId> {
        let (class, pos) = self.index.remove(&obj)?;
        let list = &mut self.by_class[class.index()];
        list.swap_remove(pos);
        if let Some(&moved) = list.get(pos) {
            self.index
                .get_mut(&moved)
                .expect("moved entry is tracked")
                .1 = pos;
        }
        Some(class)
    }

    pub fn contains(&self, obj: ObjId) -> bool {
        self.index.contains_key(&obj)
    }

    pub fn class_of(&self, obj: ObjId) -> Option<ClassId> {
        self.index.get(&obj).map(|&(c, _)| c)
    }

    pub fn of_class(&self, class: ClassId) -> &[ObjId] {
        &self.by_class[class.index()]
    }

    /// Members of a domain given as a list of exact classes.
    pub fn members(&self, classes: &[ClassId]) -> Vec<ObjId> {
        let mut out = Vec::new();
        for c in classes {
            out.extend_from_slice(self.of_class(*c));
        }
        out
    }

    pub fn len(&self) -> usize {
        self.index.len()
    }

    pub fn is_empty(&self) -> bool {
        self.index.is_empty()
    }

    pub fn peak(&self) -> usize {
        self.peak
    }
}
