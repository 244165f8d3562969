use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::io::{Read, Write};
use std::sync::Arc;

use crate::codec::{BinReader, BinWriter};
use crate::error::{Error, Result};
use crate::event_log::{EventLog, Id};
use crate::features::{read_combo, write_combo, Featurizer, Level, TagCombo};

const MIN_PART: u8 = 1;
const MAX_PART: u8 = 7;

/// Identity of a level instance owning a design-matrix column.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum InstanceKey {
    Item(Id),
    Student(Id),
    Part(u8),
    Combo(TagCombo),
    Cluster(u32),
}

impl fmt::Display for InstanceKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            InstanceKey::Item(s) | InstanceKey::Student(s) => f.write_str(s),
            InstanceKey::Part(p) => write!(f, "{p}"),
            InstanceKey::Combo(c) => write!(f, "{c}"),
            InstanceKey::Cluster(c) => write!(f, "{c}"),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
enum Columns {
    Shared(u32),
    Instanced {
        index: HashMap<InstanceKey, u32>,
        /// Admitted keys in column order.
        keys: Vec<InstanceKey>,
        /// Column per part 1..=7 for rare and unseen instances.
        fallback: Option<[u32; 7]>,
    },
}

/// Map from (descriptor, instance) to design-matrix column.
#[derive(Debug, Clone, PartialEq)]
pub struct ColumnCatalog {
    columns: Vec<Columns>,
    names: Vec<String>,
}

impl ColumnCatalog {
    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn descriptor_count(&self) -> usize {
        self.columns.len()
    }

    /// Human-readable column names, indexed by column.
    pub fn names(&self) -> &[String] {
        &self.names
    }

    /// Admitted instance keys of descriptor `i` (empty for shared ones).
    pub fn instances(&self, i: usize) -> &[InstanceKey] {
        match self.columns.get(i) {
            Some(Columns::Instanced { keys, .. }) => keys,
            _ => &[],
        }
    }

    pub fn instance_column(&self, descriptor: usize, key: &InstanceKey, part: u8) -> Result<u32> {
        match self.columns.get(descriptor) {
            Some(Columns::Instanced { index, fallback, .. }) => {
                if let Some(&c) = index.get(key) {
                    return Ok(c);
                }
                match fallback {
                    Some(fb) if (MIN_PART..=MAX_PART).contains(&part) => Ok(fb[(part - MIN_PART) as usize]),
                    _ => Err(Error::Catalog(format!(
                        "instance {key} of descriptor {descriptor} has no column and no fallback"
                    ))),
                }
            }
            Some(Columns::Shared(_)) => Err(Error::Catalog(format!("descriptor {descriptor} is not instanced"))),
            None => Err(Error::Catalog(format!("descriptor {descriptor} is not in the catalog"))),
        }
    }

    pub fn shared_column(&self, descriptor: usize) -> Result<u32> {
        match self.columns.get(descriptor) {
            Some(Columns::Shared(c)) => Ok(*c),
            Some(_) => Err(Error::Catalog(format!("descriptor {descriptor} is instanced"))),
            None => Err(Error::Catalog(format!("descriptor {descriptor} is not in the catalog"))),
        }
    }

    pub(crate) fn write_to<W: Write>(&self, w: &mut BinWriter<W>) -> Result<()> {
        w.len(self.columns.len())?;
        for c in &self.columns {
            match c {
                Columns::Shared(col) => {
                    w.u8(0)?;
                    w.u32(*col)?;
                }
                Columns::Instanced { keys, fallback, index } => {
                    w.u8(1)?;
                    w.len(keys.len())?;
                    for k in keys {
                        write_key(w, k)?;
                        w.u32(index[k])?;
                    }
                    match fallback {
                        Some(fb) => {
                            w.u8(1)?;
                            for &c in fb {
                                w.u32(c)?;
                            }
                        }
                        None => w.u8(0)?,
                    }
                }
            }
        }
        w.len(self.names.len())?;
        for n in &self.names {
            w.str(n)?;
        }
        Ok(())
    }

    pub(crate) fn read_from<R: Read>(r: &mut BinReader<R>) -> Result<Self> {
        let n = r.len()?;
        let mut columns = Vec::with_capacity(n);
        for _ in 0..n {
            columns.push(match r.u8()? {
                0 => Columns::Shared(r.u32()?),
                1 => {
                    let nk = r.len()?;
                    let mut keys = Vec::with_capacity(nk);
                    let mut index = HashMap::with_capacity(nk);
                    for _ in 0..nk {
                        let k = read_key(r)?;
                        index.insert(k.clone(), r.u32()?);
                        keys.push(k);
                    }
                    let fallback = match r.u8()? {
                        0 => None,
                        1 => {
                            let mut fb = [0u32; 7];
                            for c in fb.iter_mut() {
                                *c = r.u32()?;
                            }
                            Some(fb)
                        }
                        t => return Err(Error::Format(format!("bad fallback tag {t}"))),
                    };
                    Columns::Instanced { index, keys, fallback }
                }
                t => return Err(Error::Format(format!("bad column tag {t}"))),
            });
        }
        let nn = r.len()?;
        let mut names = Vec::with_capacity(nn);
        for _ in 0..nn {
            names.push(r.str()?);
        }
        let catalog = ColumnCatalog { columns, names };
        catalog.check()?;
        Ok(catalog)
    }

    /// Every column is referenced exactly once.
    fn check(&self) -> Result<()> {
        let mut seen = vec![false; self.names.len()];
        let mut mark = |c: u32| -> Result<()> {
            match seen.get_mut(c as usize) {
                Some(s) if !*s => {
                    *s = true;
                    Ok(())
                }
                _ => Err(Error::Format(format!("column {c} duplicated or out of range"))),
            }
        };
        for c in &self.columns {
            match c {
                Columns::Shared(col) => mark(*col)?,
                Columns::Instanced { index, fallback, keys } => {
                    if index.len() != keys.len() {
                        return Err(Error::Format("duplicate instance key".into()));
                    }
                    for &col in index.values() {
                        mark(col)?;
                    }
                    for &col in fallback.iter().flatten() {
                        mark(col)?;
                    }
                }
            }
        }
        if seen.iter().all(|&s| s) {
            Ok(())
        } else {
            Err(Error::Format("catalog has unreferenced columns".into()))
        }
    }
}

fn write_key<W: Write>(w: &mut BinWriter<W>, k: &InstanceKey) -> Result<()> {
    match k {
        InstanceKey::Item(s) => {
            w.u8(0)?;
            w.str(s)
        }
        InstanceKey::Student(s) => {
            w.u8(1)?;
            w.str(s)
        }
        InstanceKey::Part(p) => {
            w.u8(2)?;
            w.u8(*p)
        }
        InstanceKey::Combo(c) => {
            w.u8(3)?;
            write_combo(w, c)
        }
        InstanceKey::Cluster(c) => {
            w.u8(4)?;
            w.u32(*c)
        }
    }
}

fn read_key<R: Read>(r: &mut BinReader<R>) -> Result<InstanceKey> {
    Ok(match r.u8()? {
        0 => InstanceKey::Item(Arc::from(r.str()?)),
        1 => InstanceKey::Student(Arc::from(r.str()?)),
        2 => InstanceKey::Part(r.u8()?),
        3 => InstanceKey::Combo(read_combo(r)?),
        4 => InstanceKey::Cluster(r.u32()?),
        t => return Err(Error::Format(format!("bad instance key tag {t}"))),
    })
}

/// One pass over the question events of `train`: an instance gets its own
/// column iff it occurs more than `min_occurrence` times. Columns follow
/// descriptor order, then sorted instance key, then per-part fallbacks.
pub fn build_catalog(train: &EventLog, featurizer: &Featurizer) -> Result<ColumnCatalog> {
    let spec = featurizer.spec();
    if spec.is_empty() {
        return Err(Error::param("feature spec has no descriptors"));
    }
    let mut counts: BTreeMap<Level, HashMap<InstanceKey, u64>> = BTreeMap::new();
    for d in spec.descriptors().iter().filter(|d| d.is_instanced()) {
        counts.entry(d.level).or_default();
    }
    if !counts.is_empty() {
        for e in train.events().iter().filter(|e| e.is_question()) {
            for (&level, table) in counts.iter_mut() {
                if let Some(k) = featurizer.instance_key(level, e) {
                    *table.entry(k).or_default() += 1;
                }
            }
        }
    }

    let mut columns = Vec::with_capacity(spec.len());
    let mut names = Vec::new();
    for d in spec.descriptors() {
        let label = d.label();
        if !d.is_instanced() {
            columns.push(Columns::Shared(names.len() as u32));
            names.push(label);
            continue;
        }
        let mut keys: Vec<InstanceKey> = counts[&d.level]
            .iter()
            .filter(|&(_, &n)| n > d.min_occurrence as u64)
            .map(|(k, _)| k.clone())
            .collect();
        keys.sort();
        let mut index = HashMap::with_capacity(keys.len());
        for k in &keys {
            index.insert(k.clone(), names.len() as u32);
            names.push(format!("{label}[{k}]"));
        }
        let fallback = if d.fallback {
            let mut fb = [0u32; 7];
            for (p, c) in (MIN_PART..=MAX_PART).zip(fb.iter_mut()) {
                *c = names.len() as u32;
                names.push(format!("{label}[fallback part {p}]"));
            }
            Some(fb)
        } else {
            None
        };
        columns.push(Columns::Instanced { index, keys, fallback });
    }
    Ok(ColumnCatalog { columns, names })
}
