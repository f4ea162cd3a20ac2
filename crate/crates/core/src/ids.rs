//! Opaque 64-bit identifiers assigned by the catalog.

use core::fmt;

macro_rules! id_type {
    ($(#[$meta:meta])* $name:ident, $prefix:literal) => {
        $(#[$meta])*
        #[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
        #[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize), serde(transparent))]
        pub struct $name(pub u64);

        impl fmt::Display for $name {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                write!(f, concat!($prefix, "{}"), self.0)
            }
        }

        impl From<u64> for $name {
            fn from(v: u64) -> Self {
                $name(v)
            }
        }
    };
}

id_type!(
    /// Identifies an [`ImageRecord`](crate::ImageRecord).
    ImageId, "img"
);
id_type!(
    /// Identifies a [`Region`](crate::Region).
    RegionId, "reg"
);
id_type!(
    /// Identifies a thesaurus [`Term`](crate::Term).
    TermId, "term"
);
id_type!(
    /// Identifies a [`VisualCategory`](crate::VisualCategory).
    CategoryId, "V"
);
