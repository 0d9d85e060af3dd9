//! Semantic class table shared by fusion, association and evaluation.
//!
//! Class ids are dense starting at 1; id 0 is reserved for "unobserved".
//! Each class is either a countable "thing" (chair, table) that carries
//! instance identities, or amorphous "stuff" (wall, floor) that never does.

use std::fmt::Write as _;
use std::path::Path;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum LabelMapError {
    #[error("failed to read label map: {0}")]
    Io(#[from] std::io::Error),
    #[error("label map line {line}: {reason}")]
    Malformed { line: usize, reason: String },
    #[error("class ids must be dense from 1, got id {got} at position {pos}")]
    NonDenseIds { got: u16, pos: usize },
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ClassDef {
    pub id: u16,
    pub name: String,
    pub is_thing: bool,
}

/// Ordered class list with thing/stuff flags, read from `labels.txt`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabelMap {
    classes: Vec<ClassDef>,
}

impl LabelMap {
    pub fn new(classes: Vec<ClassDef>) -> Result<Self, LabelMapError> {
        for (pos, class) in classes.iter().enumerate() {
            let expected = (pos + 1) as u16;
            if class.id != expected {
                return Err(LabelMapError::NonDenseIds { got: class.id, pos });
            }
        }
        Ok(Self { classes })
    }

    pub fn n_classes(&self) -> u16 {
        self.classes.len() as u16
    }

    pub fn classes(&self) -> &[ClassDef] {
        &self.classes
    }

    pub fn get(&self, class_id: u16) -> Option<&ClassDef> {
        if class_id == 0 {
            return None;
        }
        self.classes.get(class_id as usize - 1)
    }

    /// Whether `class_id` is a countable class. Id 0 and unknown ids are not.
    pub fn is_thing(&self, class_id: u16) -> bool {
        self.get(class_id).map_or(false, |c| c.is_thing)
    }

    pub fn is_valid_class(&self, class_id: u16) -> bool {
        self.get(class_id).is_some()
    }

    /// Per-class thing flags indexed by class id (slot 0 is always false).
    pub fn thing_flags(&self) -> Vec<bool> {
        let mut flags = vec![false; self.classes.len() + 1];
        for class in &self.classes {
            flags[class.id as usize] = class.is_thing;
        }
        flags
    }

    /// Parses lines of the form `class_id name thing|stuff`.
    pub fn parse(text: &str) -> Result<Self, LabelMapError> {
        let mut classes = Vec::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let mut parts = line.split_whitespace();
            let (Some(id), Some(name), Some(kind)) = (parts.next(), parts.next(), parts.next())
            else {
                return Err(LabelMapError::Malformed {
                    line: i + 1,
                    reason: "expected `class_id name thing|stuff`".into(),
                });
            };
            let id: u16 = id.parse().map_err(|_| LabelMapError::Malformed {
                line: i + 1,
                reason: format!("bad class id `{id}`"),
            })?;
            let is_thing = match kind {
                "thing" => true,
                "stuff" => false,
                other => {
                    return Err(LabelMapError::Malformed {
                        line: i + 1,
                        reason: format!("expected thing|stuff, got `{other}`"),
                    })
                }
            };
            classes.push(ClassDef { id, name: name.to_string(), is_thing });
        }
        Self::new(classes)
    }

    pub fn load(path: &Path) -> Result<Self, LabelMapError> {
        Self::parse(&std::fs::read_to_string(path)?)
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for c in &self.classes {
            let kind = if c.is_thing { "thing" } else { "stuff" };
            let _ = writeln!(out, "{} {} {}", c.id, c.name, kind);
        }
        out
    }

    pub fn save(&self, path: &Path) -> Result<(), LabelMapError> {
        std::fs::write(path, self.to_text())?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn def(id: u16, name: &str, is_thing: bool) -> ClassDef {
        ClassDef { id, name: name.into(), is_thing }
    }

    #[test]
    fn parse_and_query() {
        let map = LabelMap::parse("1 wall stuff\n2 floor stuff\n3 chair thing\n").unwrap();
        assert_eq!(map.n_classes(), 3);
        assert!(!map.is_thing(1));
        assert!(map.is_thing(3));
        assert!(!map.is_thing(0));
        assert!(!map.is_thing(9));
    }

    #[test]
    fn round_trip_text() {
        let map = LabelMap::new(vec![def(1, "wall", false), def(2, "chair", true)]).unwrap();
        let again = LabelMap::parse(&map.to_text()).unwrap();
        assert_eq!(map, again);
    }

    #[test]
    fn rejects_non_dense_ids() {
        assert!(LabelMap::parse("1 wall stuff\n3 chair thing\n").is_err());
        assert!(LabelMap::parse("0 void stuff\n").is_err());
    }

    #[test]
    fn rejects_bad_kind() {
        assert!(LabelMap::parse("1 wall solid\n").is_err());
    }

    #[test]
    fn skips_comments_and_blanks() {
        let map = LabelMap::parse("# classes\n\n1 wall stuff\n").unwrap();
        assert_eq!(map.n_classes(), 1);
    }
}
