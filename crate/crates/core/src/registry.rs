//! The fixed alphabet of room categories that every frame's room
//! distribution is expressed over.

use std::collections::HashMap;
use std::fmt;

use thiserror::Error;

/// Number of room categories a registry must hold.
pub const ROOM_TYPE_COUNT: usize = 12;

/// Labels used when no registry file is supplied.
pub const DEFAULT_ROOM_TYPES: [&str; ROOM_TYPE_COUNT] = [
    "bathroom",
    "bedroom",
    "closet",
    "dining room",
    "entryway",
    "family room",
    "garage",
    "hallway",
    "kitchen",
    "laundry room",
    "living room",
    "office",
];

#[derive(Debug, Error, PartialEq, Eq)]
pub enum RegistryError {
    #[error("registry must list exactly {ROOM_TYPE_COUNT} room types, found {0}")]
    WrongCount(usize),
    #[error("room type label on line {line} is empty")]
    Empty { line: usize },
    #[error("room type label {label:?} on line {line} is not lowercase")]
    NotLowercase { line: usize, label: String },
    #[error("room type label {label:?} on line {line} is duplicated")]
    Duplicate { line: usize, label: String },
}

/// Ordered list of room-type labels with a reverse index.
#[derive(Clone, PartialEq, Eq)]
pub struct RoomTypeRegistry {
    types: Vec<String>,
    index: HashMap<String, usize>,
}

impl fmt::Debug for RoomTypeRegistry {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_list().entries(&self.types).finish()
    }
}

impl Default for RoomTypeRegistry {
    fn default() -> Self {
        Self::new(DEFAULT_ROOM_TYPES.iter().map(|s| s.to_string())).expect("default registry is valid")
    }
}

impl RoomTypeRegistry {
    pub fn new<I>(labels: I) -> Result<Self, RegistryError>
    where
        I: IntoIterator<Item = String>,
    {
        let mut types = Vec::with_capacity(ROOM_TYPE_COUNT);
        let mut index = HashMap::with_capacity(ROOM_TYPE_COUNT);
        for (i, label) in labels.into_iter().enumerate() {
            let line = i + 1;
            if label.is_empty() {
                return Err(RegistryError::Empty { line });
            }
            if label.to_lowercase() != label {
                return Err(RegistryError::NotLowercase { line, label });
            }
            if index.insert(label.clone(), i).is_some() {
                return Err(RegistryError::Duplicate { line, label });
            }
            types.push(label);
        }
        if types.len() != ROOM_TYPE_COUNT {
            return Err(RegistryError::WrongCount(types.len()));
        }
        Ok(Self { types, index })
    }

    /// Parses a registry file: one label per line. Surrounding whitespace is
    /// trimmed and trailing blank lines are ignored.
    pub fn parse(text: &str) -> Result<Self, RegistryError> {
        let mut lines: Vec<String> = text.lines().map(|l| l.trim().to_string()).collect();
        while lines.last().is_some_and(|l| l.is_empty()) {
            lines.pop();
        }
        Self::new(lines)
    }

    pub fn label(&self, ordinal: usize) -> Option<&str> {
        self.types.get(ordinal).map(String::as_str)
    }

    pub fn ordinal(&self, label: &str) -> Option<usize> {
        self.index.get(label).copied()
    }

    pub fn labels(&self) -> &[String] {
        &self.types
    }

    pub fn len(&self) -> usize {
        self.types.len()
    }

    pub fn is_empty(&self) -> bool {
        self.types.is_empty()
    }

    /// Serialized form, one label per line.
    pub fn to_text(&self) -> String {
        let mut s = self.types.join("\n");
        s.push('\n');
        s
    }
}
