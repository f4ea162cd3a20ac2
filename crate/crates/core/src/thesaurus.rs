//! Hierarchical controlled vocabulary (broader/narrower only).

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::ids::TermId;
use crate::model::fold_label;

#[derive(Debug, Clone, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct Term {
    pub id: TermId,
    pub label: String,
    pub parent_id: Option<TermId>,
}

/// A forest of terms with case-insensitively unique labels.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct Thesaurus {
    terms: BTreeMap<TermId, Term>,
    #[cfg_attr(feature = "serde", serde(skip))]
    by_label: BTreeMap<String, TermId>,
    next_id: u64,
}

impl Thesaurus {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.terms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.terms.is_empty()
    }

    pub fn get(&self, id: TermId) -> Result<&Term> {
        self.terms.get(&id).ok_or(Error::UnknownTerm(id))
    }

    pub fn contains(&self, id: TermId) -> bool {
        self.terms.contains_key(&id)
    }

    pub fn terms(&self) -> impl Iterator<Item = &Term> {
        self.terms.values()
    }

    pub fn find(&self, label: &str) -> Option<TermId> {
        self.by_label.get(&fold_label(label)).copied()
    }

    /// Adds a term under `parent` (or as a root). A new term cannot close a
    /// cycle, so acyclicity holds by construction.
    pub fn add(&mut self, label: &str, parent: Option<TermId>) -> Result<TermId> {
        let label = label.trim();
        if label.is_empty() {
            return Err(Error::InvalidThesaurus("empty term label".into()));
        }
        let folded = fold_label(label);
        if self.by_label.contains_key(&folded) {
            return Err(Error::DuplicateKey(String::from(label)));
        }
        if let Some(p) = parent {
            self.get(p)?;
        }
        let id = TermId(self.next_id);
        self.next_id += 1;
        self.terms.insert(id, Term { id, label: String::from(label), parent_id: parent });
        self.by_label.insert(folded, id);
        Ok(id)
    }

    /// Builds a thesaurus from `(label, parent_label)` pairs given in any order.
    pub fn from_pairs<'a, I>(pairs: I) -> Result<Self>
    where
        I: IntoIterator<Item = (&'a str, Option<&'a str>)>,
    {
        let pairs: Vec<_> = pairs.into_iter().collect();
        let mut parent_of: BTreeMap<String, Option<String>> = BTreeMap::new();
        let mut order = Vec::new();
        for (label, parent) in &pairs {
            let key = fold_label(label);
            if key.is_empty() {
                return Err(Error::InvalidThesaurus("empty term label".into()));
            }
            if parent_of.insert(key.clone(), parent.map(fold_label).filter(|p| !p.is_empty())).is_some() {
                return Err(Error::DuplicateKey(String::from(*label)));
            }
            order.push((*label, key));
        }
        for (label, key) in &order {
            if let Some(Some(p)) = parent_of.get(key) {
                if !parent_of.contains_key(p) {
                    return Err(Error::InvalidThesaurus(format!("{label:?} names unknown parent {p:?}")));
                }
            }
        }
        // insert parents before children, keeping file order otherwise
        let mut th = Thesaurus::new();
        let mut pending: Vec<&(&str, String)> = order.iter().collect();
        while !pending.is_empty() {
            let before = pending.len();
            let mut rest = Vec::new();
            for item in pending {
                let (label, key) = item;
                let parent = parent_of[key].as_ref();
                match parent {
                    None => {
                        th.add(label, None)?;
                    }
                    Some(p) => match th.find(p) {
                        Some(pid) => {
                            th.add(label, Some(pid))?;
                        }
                        None => rest.push(item),
                    },
                }
            }
            if rest.len() == before {
                return Err(Error::InvalidThesaurus("parent links form a cycle".into()));
            }
            pending = rest;
        }
        Ok(th)
    }

    pub fn children(&self, id: TermId) -> impl Iterator<Item = TermId> + '_ {
        self.terms.values().filter(move |t| t.parent_id == Some(id)).map(|t| t.id)
    }

    pub fn roots(&self) -> impl Iterator<Item = TermId> + '_ {
        self.terms.values().filter(|t| t.parent_id.is_none()).map(|t| t.id)
    }

    /// `id` plus all transitive narrower terms.
    pub fn descendants(&self, id: TermId) -> Result<BTreeSet<TermId>> {
        self.get(id)?;
        let mut children: BTreeMap<TermId, Vec<TermId>> = BTreeMap::new();
        for t in self.terms.values() {
            if let Some(p) = t.parent_id {
                children.entry(p).or_default().push(t.id);
            }
        }
        let mut out = BTreeSet::new();
        let mut stack = alloc::vec![id];
        while let Some(t) = stack.pop() {
            if out.insert(t) {
                if let Some(c) = children.get(&t) {
                    stack.extend(c.iter().copied());
                }
            }
        }
        Ok(out)
    }

    /// Checks label uniqueness, parent existence and acyclicity.
    pub fn validate(&self) -> Result<()> {
        let mut labels = BTreeSet::new();
        for t in self.terms.values() {
            if !labels.insert(fold_label(&t.label)) {
                return Err(Error::InvalidThesaurus(format!("duplicate label {:?}", t.label)));
            }
            let mut cur = t.parent_id;
            let mut steps = 0;
            while let Some(p) = cur {
                steps += 1;
                if steps > self.terms.len() {
                    return Err(Error::InvalidThesaurus(format!("cycle through {:?}", t.label)));
                }
                cur = self
                    .terms
                    .get(&p)
                    .ok_or_else(|| Error::InvalidThesaurus(format!("{:?} has unknown parent {p}", t.label)))?
                    .parent_id;
            }
        }
        Ok(())
    }

    /// Rebuilds the label index after deserialization.
    pub fn reindex(&mut self) {
        self.by_label = self.terms.values().map(|t| (fold_label(&t.label), t.id)).collect();
    }

    /// Inserts a term with a preassigned id; used when reloading persisted data.
    pub fn insert_raw(&mut self, term: Term) {
        self.next_id = self.next_id.max(term.id.0 + 1);
        self.by_label.insert(fold_label(&term.label), term.id);
        self.terms.insert(term.id, term);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    #[test]
    fn leaf_descendants_is_itself() {
        let mut th = Thesaurus::new();
        let a = th.add("animal", None).unwrap();
        let b = th.add("bird", Some(a)).unwrap();
        assert_eq!(th.descendants(b).unwrap(), [b].into_iter().collect());
    }

    #[test]
    fn chain_descendants() {
        let mut th = Thesaurus::new();
        let a = th.add("a", None).unwrap();
        let b = th.add("b", Some(a)).unwrap();
        let c = th.add("c", Some(b)).unwrap();
        assert_eq!(th.descendants(a).unwrap().into_iter().collect::<Vec<_>>(), vec![a, b, c]);
    }

    #[test]
    fn two_level_forest() {
        let mut th = Thesaurus::new();
        let nature = th.add("nature", None).unwrap();
        let tree = th.add("tree", Some(nature)).unwrap();
        let water = th.add("water", Some(nature)).unwrap();
        let other = th.add("vehicle", None).unwrap();
        th.add("car", Some(other)).unwrap();
        assert_eq!(th.descendants(nature).unwrap(), [nature, tree, water].into_iter().collect());
        assert_eq!(th.roots().count(), 2);
    }

    #[test]
    fn unknown_term_is_not_found() {
        let th = Thesaurus::new();
        assert_eq!(th.descendants(TermId(9)), Err(Error::UnknownTerm(TermId(9))));
    }

    #[test]
    fn labels_are_case_insensitive_unique() {
        let mut th = Thesaurus::new();
        th.add("Bird", None).unwrap();
        assert!(matches!(th.add("bIRD", None), Err(Error::DuplicateKey(_))));
        assert!(th.find("BIRD").is_some());
    }

    #[test]
    fn from_pairs_resolves_forward_parents() {
        let th = Thesaurus::from_pairs(vec![("sparrow", Some("bird")), ("bird", Some("animal")), ("animal", None)]).unwrap();
        let animal = th.find("animal").unwrap();
        assert_eq!(th.descendants(animal).unwrap().len(), 3);
        th.validate().unwrap();
    }

    #[test]
    fn from_pairs_rejects_cycles_and_dangling() {
        assert!(Thesaurus::from_pairs(vec![("a", Some("b")), ("b", Some("a"))]).is_err());
        assert!(Thesaurus::from_pairs(vec![("a", Some("zzz"))]).is_err());
        assert!(Thesaurus::from_pairs(vec![("a", None), ("A", None)]).is_err());
    }
}
