//! Physical tensor relations spread over `s` sites, and the per-site pieces
//! of the implementation-algebra operators.
//!
//! The functions here are shared by the sequential reference executor and
//! the parallel runtime, so both place and reduce tuples identically.

use std::collections::{BTreeMap, HashMap, HashSet};

use serde_json::{json, Value};

use crate::error::{Error, Result};
use crate::kernels::KernelRegistry;
use crate::keyexpr::{KeyFn, Pred};
use crate::model::{ArrayType, DenseArray, Key, TensorRelation};
use crate::ops::{dims_from_json, Aggregator, ArrayMap, Combine, KeyMap, Payload};
use crate::plan::{ExecPlan, IaOp};
use crate::tra::{join_key, project, Catalog};

/// Declared initial placement of a source.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum PartitionSpec {
    /// Round-robin in canonical order: tuple `i` lives on site `i mod s`.
    None,
    All,
    Dims(Vec<usize>),
}

impl PartitionSpec {
    pub fn validate(&self, key_arity: usize) -> Result<()> {
        if let PartitionSpec::Dims(d) = self {
            if d.iter().any(|&x| x >= key_arity) {
                return Err(Error::validation("partition", format!("dims {d:?} exceed key arity {key_arity}")));
            }
        }
        Ok(())
    }

    pub fn placement(&self) -> Placement {
        match self {
            PartitionSpec::None => Placement::Spread,
            PartitionSpec::All => Placement::All,
            PartitionSpec::Dims(d) => Placement::Part(sorted_dims(d)),
        }
    }

    pub fn to_json(&self) -> Value {
        match self {
            PartitionSpec::None => json!("none"),
            PartitionSpec::All => json!("all"),
            PartitionSpec::Dims(d) => json!({ "dims": d }),
        }
    }

    pub fn from_json(v: &Value) -> Result<Self> {
        match v {
            Value::String(s) if s == "none" => Ok(PartitionSpec::None),
            Value::String(s) if s == "all" => Ok(PartitionSpec::All),
            Value::Object(_) => Ok(PartitionSpec::Dims(dims_from_json(
                v.get("dims").ok_or_else(|| Error::Format(format!("partition needs dims: {v}")))?,
            )?)),
            _ => Err(Error::Format(format!("unknown partition spec {v}"))),
        }
    }
}

/// Statically known placement of a physical relation.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Placement {
    /// Every tuple on every site.
    All,
    /// Each tuple on the site given by hashing these key positions in this order.
    Part(Vec<usize>),
    /// Each tuple on some single site.
    Spread,
}

impl std::fmt::Display for Placement {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Placement::All => write!(f, "all"),
            Placement::Part(d) => write!(f, "part<{}>", crate::model::join_usize(d)),
            Placement::Spread => write!(f, "spread"),
        }
    }
}

pub fn sorted_dims(d: &[usize]) -> Vec<usize> {
    let mut v = d.to_vec();
    v.sort_unstable();
    v.dedup();
    v
}

pub fn fnv1a64(bytes: impl IntoIterator<Item = u8>) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

/// Site of a key hashed on `dims` (in the given order). No dims means site 0.
pub fn site_for(key: &[u64], dims: &[usize], sites: usize) -> usize {
    if dims.is_empty() {
        return 0;
    }
    (fnv1a64(dims.iter().flat_map(|&d| key[d].to_le_bytes())) % sites as u64) as usize
}

/// The site that sends a replicated tuple during a broadcast.
pub fn owner_site(key: &[u64], sites: usize) -> usize {
    let all: Vec<usize> = (0..key.len()).collect();
    site_for(key, &all, sites)
}

pub type SiteTuples<P> = Vec<(Key, P)>;

#[derive(Debug, Clone)]
pub struct PhysicalRelation<P> {
    pub key_arity: usize,
    pub array_type: ArrayType,
    pub sites: Vec<SiteTuples<P>>,
}

impl<P: Payload> PhysicalRelation<P> {
    pub fn empty(key_arity: usize, array_type: ArrayType, sites: usize) -> Self {
        PhysicalRelation { key_arity, array_type, sites: vec![Vec::new(); sites] }
    }

    /// Places a logical relation according to a declared partitioning.
    pub fn place(key_arity: usize, array_type: ArrayType, tuples: &[(Key, P)], spec: &PartitionSpec, sites: usize) -> Self {
        let mut rel = Self::empty(key_arity, array_type, sites);
        for (i, (k, a)) in tuples.iter().enumerate() {
            match spec {
                PartitionSpec::None => rel.sites[i % sites].push((k.clone(), a.clone())),
                PartitionSpec::All => {
                    for s in rel.sites.iter_mut() {
                        s.push((k.clone(), a.clone()));
                    }
                }
                PartitionSpec::Dims(d) => {
                    rel.sites[site_for(k, &sorted_dims(d), sites)].push((k.clone(), a.clone()))
                }
            }
        }
        for s in rel.sites.iter_mut() {
            s.sort_by(|a, b| a.0.cmp(&b.0));
        }
        rel
    }

    pub fn site_count(&self) -> usize {
        self.sites.len()
    }

    pub fn tuple_count(&self) -> usize {
        self.sites.iter().map(Vec::len).sum()
    }

    pub fn physical_floats(&self) -> u64 {
        self.sites.iter().flatten().map(|(_, a)| a.floats()).sum()
    }

    /// All tuples with their site, in canonical `(site, key)` order.
    pub fn triples(&self) -> impl Iterator<Item = (usize, &Key, &P)> {
        self.sites.iter().enumerate().flat_map(|(s, t)| t.iter().map(move |(k, a)| (s, k, a)))
    }

    /// Union over sites with exact duplicates collapsed, sorted by key.
    pub fn project(&self) -> Vec<(Key, P)> {
        let mut all: Vec<(Key, P)> = self.sites.iter().flatten().cloned().collect();
        all.sort_by(|a, b| a.0.cmp(&b.0));
        let mut out: Vec<(Key, P)> = Vec::with_capacity(all.len());
        let mut group_start = 0;
        for (k, a) in all {
            if out.last().is_none_or(|(lk, _)| *lk != k) {
                group_start = out.len();
            }
            if !out[group_start..].iter().any(|(_, b)| b.same_payload(&a)) {
                out.push((k, a));
            }
        }
        out
    }

    pub fn frontier(&self) -> Key {
        crate::model::frontier_of(self.key_arity, self.sites.iter().flatten().map(|(k, _)| k))
    }

    /// Every distinct `(key, array)` present at every site.
    pub fn all_sites(&self) -> bool {
        let union = self.project();
        self.sites.iter().all(|site| {
            site.len() >= union.len()
                && union.iter().all(|(k, a)| site.iter().any(|(sk, sa)| sk == k && sa.same_payload(a)))
        })
    }

    /// Each key on one site only, and equal projections onto `dims` co-located.
    pub fn partitioned_by(&self, dims: &[usize]) -> bool {
        let mut seen: HashSet<&Key> = HashSet::new();
        let mut home: HashMap<Key, usize> = HashMap::new();
        for (s, k, _) in self.triples() {
            if !seen.insert(k) {
                return false;
            }
            if *home.entry(project(k, dims)).or_insert(s) != s {
                return false;
            }
        }
        true
    }
}

impl PhysicalRelation<DenseArray> {
    /// Drops the site attribute; duplicate keys with different arrays are kept.
    pub fn to_logical(&self) -> Result<TensorRelation> {
        canonical_relation(self.key_arity, self.array_type.clone(), self.project())
    }

    pub fn from_relation(rel: &TensorRelation, spec: &PartitionSpec, sites: usize) -> Self {
        Self::place(rel.key_arity(), rel.array_type().clone(), rel.tuples(), spec, sites)
    }
}

/// Sorts by key, then by array bits, so bags with repeated keys compare deterministically.
pub fn canonical_relation(key_arity: usize, ty: ArrayType, mut tuples: Vec<(Key, DenseArray)>) -> Result<TensorRelation> {
    tuples.sort_by(|a, b| {
        a.0.cmp(&b.0).then_with(|| {
            let x: Vec<u64> = a.1.values().iter().map(|v| v.to_bits()).collect();
            let y: Vec<u64> = b.1.values().iter().map(|v| v.to_bits()).collect();
            x.cmp(&y)
        })
    });
    TensorRelation::from_tuples(key_arity, ty, tuples)
}

pub fn canonical(rel: &TensorRelation) -> Result<TensorRelation> {
    canonical_relation(rel.key_arity(), rel.array_type().clone(), rel.tuples().to_vec())
}

fn sort_site<P>(mut v: Vec<(Key, P)>) -> Vec<(Key, P)> {
    v.sort_by(|a, b| a.0.cmp(&b.0));
    v
}

/// Same-site join. Output keys are `out_map(join_key)` when a key map was fused in.
pub fn join_site<P: Payload>(
    reg: &KernelRegistry,
    keys_l: &[usize],
    keys_r: &[usize],
    proj: &Combine,
    out_map: Option<&KeyFn>,
    left: &[(Key, P)],
    right: &[(Key, P)],
) -> Result<Vec<(Key, P)>> {
    let mut index: HashMap<Key, Vec<usize>> = HashMap::new();
    for (i, (k, _)) in right.iter().enumerate() {
        index.entry(project(k, keys_r)).or_default().push(i);
    }
    let mut out = Vec::new();
    for (kl, al) in left {
        if let Some(m) = index.get(&project(kl, keys_l)) {
            for &i in m {
                let (kr, ar) = &right[i];
                let mut key = join_key(kl, kr, keys_r);
                if let Some(f) = out_map {
                    key = f.apply(&key)?;
                }
                out.push((key, proj.apply(reg, al, ar)?));
            }
        }
    }
    Ok(sort_site(out))
}

/// Same-site aggregation; groups reduce in canonical key order.
pub fn agg_site<P: Payload>(reg: &KernelRegistry, group_by: &[usize], agg: &Aggregator, input: &[(Key, P)]) -> Result<Vec<(Key, P)>> {
    let mut groups: BTreeMap<Key, Vec<(&Key, &P)>> = BTreeMap::new();
    for (k, a) in input {
        groups.entry(project(k, group_by)).or_default().push((k, a));
    }
    groups.into_iter().map(|(g, items)| Ok((g, agg.reduce(reg, &items)?))).collect()
}

pub fn filter_site<P: Payload>(pred: &Pred, input: &[(Key, P)]) -> Vec<(Key, P)> {
    input.iter().filter(|(k, _)| pred.test(k)).cloned().collect()
}

pub fn map_site<P: Payload>(reg: &KernelRegistry, key_map: &KeyMap, array_map: &ArrayMap, input: &[(Key, P)]) -> Result<Vec<(Key, P)>> {
    let mut out = Vec::with_capacity(input.len() * key_map.arity());
    for (k, a) in input {
        let keys = key_map.apply(k)?;
        let arrays = array_map.apply(reg, a)?;
        if keys.len() != arrays.len() {
            return Err(Error::validation("map", format!("key map yields {} outputs, array map {}", keys.len(), arrays.len())));
        }
        out.extend(keys.into_iter().zip(arrays));
    }
    Ok(sort_site(out))
}

/// Outgoing batches of one site for a broadcast, indexed by destination.
/// When the input is replicated everywhere only the owner of a tuple sends it.
pub fn route_bcast<P: Payload>(site: usize, tuples: &[(Key, P)], sites: usize, replicated_input: bool) -> Vec<Vec<(Key, P)>> {
    let mut out = vec![Vec::new(); sites];
    for (k, a) in tuples {
        if replicated_input && owner_site(k, sites) != site {
            continue;
        }
        for dest in out.iter_mut() {
            dest.push((k.clone(), a.clone()));
        }
    }
    out
}

/// Outgoing batches of one site for a shuffle on `dims`.
pub fn route_shuf<P: Payload>(dims: &[usize], tuples: &[(Key, P)], sites: usize) -> Vec<Vec<(Key, P)>> {
    let dims = sorted_dims(dims);
    let mut out = vec![Vec::new(); sites];
    for (k, a) in tuples {
        out[site_for(k, &dims, sites)].push((k.clone(), a.clone()));
    }
    out
}

/// Builds a site's new store from batches indexed by origin site: origin
/// order, then a stable sort by key. With `dedupe`, replicated copies of a key
/// collapse to the lowest-origin copy and conflicting copies are an error.
pub fn assemble<P: Payload>(by_origin: Vec<Vec<(Key, P)>>, dedupe: bool) -> Result<Vec<(Key, P)>> {
    let all = sort_site(by_origin.into_iter().flatten().collect());
    if !dedupe {
        return Ok(all);
    }
    let mut out: Vec<(Key, P)> = Vec::with_capacity(all.len());
    for (k, a) in all {
        match out.last() {
            Some((lk, la)) if *lk == k => {
                if !la.same_payload(&a) {
                    return Err(Error::Ambiguity(k));
                }
            }
            _ => out.push((k, a)),
        }
    }
    Ok(out)
}

/// Sequential broadcast over a whole relation.
pub fn bcast<P: Payload>(rel: &PhysicalRelation<P>, replicated_input: bool) -> Result<(PhysicalRelation<P>, u64)> {
    let s = rel.site_count();
    exchange(rel, |site, t| route_bcast(site, t, s, replicated_input), false)
}

/// Sequential shuffle over a whole relation.
pub fn shuf<P: Payload>(rel: &PhysicalRelation<P>, dims: &[usize], dedupe: bool) -> Result<(PhysicalRelation<P>, u64)> {
    let s = rel.site_count();
    exchange(rel, |_, t| route_shuf(dims, t, s), dedupe)
}

fn exchange<P: Payload>(
    rel: &PhysicalRelation<P>,
    route: impl Fn(usize, &[(Key, P)]) -> Vec<Vec<(Key, P)>>,
    dedupe: bool,
) -> Result<(PhysicalRelation<P>, u64)> {
    let s = rel.site_count();
    let mut inbox: Vec<Vec<Vec<(Key, P)>>> = vec![Vec::with_capacity(s); s];
    let mut sent = 0u64;
    for (origin, tuples) in rel.sites.iter().enumerate() {
        for (dest, batch) in route(origin, tuples).into_iter().enumerate() {
            sent += batch.iter().map(|(_, a)| a.floats()).sum::<u64>();
            inbox[dest].push(batch);
        }
    }
    let sites = inbox.into_iter().map(|b| assemble(b, dedupe)).collect::<Result<Vec<_>>>()?;
    Ok((PhysicalRelation { key_arity: rel.key_arity, array_type: rel.array_type.clone(), sites }, sent))
}

/// One local operator on one site's inputs.
pub fn local_step<P: Payload>(reg: &KernelRegistry, op: &IaOp, inputs: &[&[(Key, P)]]) -> Result<Vec<(Key, P)>> {
    match op {
        IaOp::Join { keys_l, keys_r, proj, out_map } => {
            join_site(reg, keys_l, keys_r, proj, out_map.as_ref(), inputs[0], inputs[1])
        }
        IaOp::Agg { group_by, agg } => agg_site(reg, group_by, agg, inputs[0]),
        IaOp::Filter { pred } => Ok(filter_site(pred, inputs[0])),
        IaOp::Map { key_map, array_map } => map_site(reg, key_map, array_map, inputs[0]),
        other => Err(Error::validation(other.label(), "not a local operator")),
    }
}

/// Per-node outputs of a sequential run, indexed like the plan's nodes.
#[derive(Debug, Clone)]
pub struct ReferenceRun<P> {
    pub outputs: Vec<PhysicalRelation<P>>,
    /// Floats sent by each node, self-sends included.
    pub transfers: Vec<u64>,
}

/// Sequential reference execution. `source` places a named source on the sites.
pub fn execute_reference<P: Payload>(
    plan: &ExecPlan,
    reg: &KernelRegistry,
    source: &dyn Fn(&str) -> Result<PhysicalRelation<P>>,
) -> Result<ReferenceRun<P>> {
    let mut outputs: Vec<PhysicalRelation<P>> = Vec::with_capacity(plan.nodes.len());
    let mut transfers = Vec::with_capacity(plan.nodes.len());
    for n in &plan.nodes {
        let (rel, sent) = match &n.op {
            IaOp::Source { name } => (source(name)?, 0),
            IaOp::Bcast => bcast(&outputs[n.inputs[0]], n.replicated_input)?,
            IaOp::Shuf { dims } => shuf(&outputs[n.inputs[0]], dims, n.replicated_input)?,
            op => {
                let mut out = PhysicalRelation::empty(n.key_arity, n.array_type.clone(), plan.sites);
                for site in 0..plan.sites {
                    let ins: Vec<&[(Key, P)]> = n.inputs.iter().map(|&i| outputs[i].sites[site].as_slice()).collect();
                    out.sites[site] = local_step(reg, op, &ins)?;
                }
                (out, 0)
            }
        };
        outputs.push(rel);
        transfers.push(sent);
    }
    Ok(ReferenceRun { outputs, transfers })
}

/// Places catalog data on `sites` sites per each source's declared partitioning.
pub fn dense_source(catalog: &Catalog, sites: usize) -> impl Fn(&str) -> Result<PhysicalRelation<DenseArray>> + '_ {
    move |name| {
        let info = catalog.get(name)?;
        Ok(PhysicalRelation::from_relation(catalog.relation(name)?, &info.partition, sites))
    }
}

/// Like `dense_source` but with array types as payloads; works on shape-only catalogs.
pub fn symbolic_source(catalog: &Catalog, sites: usize) -> impl Fn(&str) -> Result<PhysicalRelation<ArrayType>> + '_ {
    move |name| {
        let info = catalog.get(name)?;
        let tuples = catalog.symbolic_tuples(name)?;
        Ok(PhysicalRelation::place(info.key_arity, info.array_type.clone(), &tuples, &info.partition, sites))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::blockify;

    fn r_a() -> TensorRelation {
        let a = DenseArray::from_rows(&[
            vec![1., 2., 5., 6.],
            vec![3., 4., 7., 8.],
            vec![9., 10., 13., 14.],
            vec![11., 12., 15., 16.],
        ])
        .unwrap();
        blockify(&a, 2, 2).unwrap()
    }

    #[test]
    fn fnv_reference_values() {
        assert_eq!(fnv1a64([]), 0xcbf29ce484222325);
        assert_eq!(fnv1a64(*b"a"), 0xaf63dc4c8601ec8c);
        assert_eq!(fnv1a64(*b"foobar"), 0x85944171f73967e8);
    }

    #[test]
    fn bcast_replicates_everywhere() {
        let p = PhysicalRelation::from_relation(&r_a(), &PartitionSpec::None, 3);
        assert!(!p.all_sites());
        let (b, sent) = bcast(&p, false).unwrap();
        assert_eq!(b.tuple_count(), 12);
        assert_eq!(sent, 16 * 3);
        assert!(b.all_sites());
        assert!(!b.partitioned_by(&[0]));
        let (bb, sent2) = bcast(&b, true).unwrap();
        assert_eq!(sent2, 16 * 3);
        assert_eq!(bb.sites, b.sites);
        let one = PhysicalRelation::from_relation(&r_a(), &PartitionSpec::None, 1);
        assert!(one.all_sites());
        assert_eq!(bcast(&one, false).unwrap().0.sites, one.sites);
    }

    #[test]
    fn shuf_colocates_and_dedupes_replicas() {
        let p = PhysicalRelation::from_relation(&r_a(), &PartitionSpec::All, 2);
        let (s, sent) = shuf(&p, &[0], true).unwrap();
        assert_eq!(sent, 32);
        assert_eq!(s.tuple_count(), 4);
        assert!(s.partitioned_by(&[0]));
        assert!(s.partitioned_by(&[0, 1]));
        let h0 = site_for(&[0, 0], &[0], 2);
        let h1 = site_for(&[1, 0], &[0], 2);
        assert_eq!(s.sites[h0].iter().filter(|(k, _)| k[0] == 0).count(), 2);
        assert_eq!(s.sites[h1].iter().filter(|(k, _)| k[0] == 1).count(), 2);
        let again = shuf(&shuf(&s, &[1], true).unwrap().0, &[0], true).unwrap().0;
        assert_eq!(again.sites, s.sites);
        assert!(s.to_logical().unwrap().bit_eq(&r_a()));
    }

    #[test]
    fn conflicting_replicas_are_ambiguous() {
        let t = ArrayType::vector(1).unwrap();
        let mut p = PhysicalRelation::<DenseArray>::empty(1, t.clone(), 2);
        p.sites[0].push((vec![0], DenseArray::new(t.clone(), vec![1.]).unwrap()));
        p.sites[1].push((vec![0], DenseArray::new(t, vec![2.]).unwrap()));
        assert!(matches!(shuf(&p, &[0], true), Err(Error::Ambiguity(_))));
        assert_eq!(shuf(&p, &[0], false).unwrap().0.tuple_count(), 2);
    }

    #[test]
    fn empty_dims_gather_to_site_zero() {
        let p = PhysicalRelation::from_relation(&r_a(), &PartitionSpec::None, 3);
        let (s, _) = shuf(&p, &[], false).unwrap();
        assert_eq!(s.sites[0].len(), 4);
        assert!(s.sites[1].is_empty() && s.sites[2].is_empty());
    }

    #[test]
    fn local_aggregation_keeps_per_site_partials() {
        let p = PhysicalRelation::from_relation(&r_a(), &PartitionSpec::All, 2);
        let reg = KernelRegistry::global();
        let agg = Aggregator::op("matAdd");
        let parts: Vec<_> = p.sites.iter().map(|t| agg_site(reg, &[], &agg, t).unwrap()).collect();
        assert_eq!(parts[0].len(), 1);
        assert_eq!(parts[0][0].1.values(), &[28., 32., 36., 40.]);
        assert!(parts[1][0].1.bit_eq(&parts[0][0].1));
    }

    #[test]
    fn insert_dim_duplicate_example() {
        let reg = KernelRegistry::global();
        let out = map_site(
            reg,
            &KeyMap::InsertDim { dim: 2, count: 2 },
            &ArrayMap::Duplicate { count: 2 },
            r_a().tuples(),
        )
        .unwrap();
        assert_eq!(out.len(), 8);
        let keys: Vec<Key> = out.iter().map(|(k, _)| k.clone()).collect();
        assert_eq!(keys[0], vec![0, 0, 0]);
        assert_eq!(keys[1], vec![0, 0, 1]);
        assert_eq!(keys[7], vec![1, 1, 1]);
        assert_eq!(out[3].1.values(), &[5., 6., 7., 8.]);
    }
}
