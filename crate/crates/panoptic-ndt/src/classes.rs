//! Semantic class table with the stuff/thing split.

use thiserror::Error;

pub type ClassId = u8;

/// Reserved class id for unlabeled pixels and voxels.
pub const VOID_CLASS: ClassId = 0;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ClassKind {
    Void,
    Stuff,
    Thing,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClassDef {
    pub id: ClassId,
    pub name: String,
    pub kind: ClassKind,
}

#[derive(Debug, Error, PartialEq)]
pub enum ClassTableError {
    #[error("class ids must be contiguous from 0, got {got} at position {pos}")]
    NonContiguous { pos: usize, got: ClassId },
    #[error("class 0 is reserved for void")]
    BadVoid,
    #[error("only class 0 may be void (class {0})")]
    VoidNotFirst(ClassId),
    #[error("class table holds at most 256 classes")]
    TooManyClasses,
}

/// Ordered class list; id 0 is always void. The table fixes the
/// dimensionality of every semantic histogram in a map.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassTable {
    classes: Vec<ClassDef>,
}

impl ClassTable {
    /// Build from non-void classes; a void entry is prepended as id 0.
    /// Each element is (name, kind).
    pub fn new(non_void: &[(&str, ClassKind)]) -> Result<Self, ClassTableError> {
        if non_void.len() >= 256 {
            return Err(ClassTableError::TooManyClasses);
        }
        let mut classes = vec![ClassDef {
            id: VOID_CLASS,
            name: "void".to_string(),
            kind: ClassKind::Void,
        }];
        for (i, (name, kind)) in non_void.iter().enumerate() {
            if *kind == ClassKind::Void {
                return Err(ClassTableError::VoidNotFirst((i + 1) as ClassId));
            }
            classes.push(ClassDef {
                id: (i + 1) as ClassId,
                name: name.to_string(),
                kind: *kind,
            });
        }
        Ok(Self { classes })
    }

    /// Build from a full definition list, validating the invariants.
    pub fn from_defs(classes: Vec<ClassDef>) -> Result<Self, ClassTableError> {
        if classes.len() > 256 {
            return Err(ClassTableError::TooManyClasses);
        }
        for (pos, def) in classes.iter().enumerate() {
            if def.id as usize != pos {
                return Err(ClassTableError::NonContiguous { pos, got: def.id });
            }
            match (pos, def.kind) {
                (0, ClassKind::Void) => {}
                (0, _) => return Err(ClassTableError::BadVoid),
                (_, ClassKind::Void) => return Err(ClassTableError::VoidNotFirst(def.id)),
                _ => {}
            }
        }
        Ok(Self { classes })
    }

    /// Number of classes including void; semantic histograms have this
    /// many bins.
    pub fn len(&self) -> usize {
        self.classes.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn contains(&self, id: ClassId) -> bool {
        (id as usize) < self.classes.len()
    }

    pub fn kind(&self, id: ClassId) -> Option<ClassKind> {
        self.classes.get(id as usize).map(|c| c.kind)
    }

    pub fn is_thing(&self, id: ClassId) -> bool {
        self.kind(id) == Some(ClassKind::Thing)
    }

    pub fn is_stuff(&self, id: ClassId) -> bool {
        self.kind(id) == Some(ClassKind::Stuff)
    }

    pub fn name(&self, id: ClassId) -> Option<&str> {
        self.classes.get(id as usize).map(|c| c.name.as_str())
    }

    pub fn defs(&self) -> &[ClassDef] {
        &self.classes
    }

    pub fn thing_ids(&self) -> impl Iterator<Item = ClassId> + '_ {
        self.classes
            .iter()
            .filter(|c| c.kind == ClassKind::Thing)
            .map(|c| c.id)
    }

    pub fn stuff_ids(&self) -> impl Iterator<Item = ClassId> + '_ {
        self.classes
            .iter()
            .filter(|c| c.kind == ClassKind::Stuff)
            .map(|c| c.id)
    }
}
