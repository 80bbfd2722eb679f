//! Labelled rooted trees and their values: the diagrammatic pipeline.
//!
//! Every series coefficient is a sum over inequivalent labelled trees of a
//! product of node factors and propagators. Trees are planar: two trees are
//! equivalent when a deformation matches all labels without crossing lines,
//! so a class is a multiset of child subtrees together with the number of
//! distinct orderings. The enumeration is model-driven: only multi-indices
//! with nonzero force coefficients generate internal nodes.

use std::cell::RefCell;
use std::collections::HashMap;
use std::rc::Rc;

use crate::error::{Error, Result};
use crate::freq::ScalePartition;
use crate::model::{sidx_norm, ModelView, SIdx};
use crate::poly::CoeffPoly;
use crate::scalar::{CScalar, RealScalar};
use crate::{Mode, Sign, Variant};

/// Node species. Internal nodes of positive order take their arity from the
/// force multi-index (arity = order + 1); counterterm nodes have order zero,
/// arity two, and carry a sign.
#[derive(Clone, PartialEq, Eq, Debug)]
pub enum NodeKind {
    End { j: usize, sign: Sign },
    Internal { j: usize, order: usize },
    Counterterm { j: usize, sign: Sign },
}

impl NodeKind {
    pub fn component(&self) -> usize {
        match self {
            NodeKind::End { j, .. } => *j,
            NodeKind::Internal { j, .. } => *j,
            NodeKind::Counterterm { j, .. } => *j,
        }
    }

    pub fn order(&self) -> usize {
        match self {
            NodeKind::Internal { order, .. } => *order,
            _ => 0,
        }
    }
}

#[derive(Clone, Debug)]
pub struct TreeNode {
    pub kind: NodeKind,
    /// Sign label of the exiting line. In the real formulation it equals the
    /// minimizer sign of the line momentum; in the complex formulation it is
    /// a free label deciding which equation tower the line feeds.
    pub line_sign: Sign,
    pub children: Vec<usize>,
}

#[derive(Clone, Debug)]
pub struct LabeledTree {
    pub variant: Variant,
    pub dim: usize,
    pub nodes: Vec<TreeNode>,
    pub root: usize,
}

impl LabeledTree {
    /// Momentum of the line exiting each node, by the conservation law:
    /// internal lines carry the sum of the entering momenta, counterterm
    /// nodes absorb one unit `sigma e_j`.
    pub fn momenta(&self) -> Vec<Mode> {
        let mut out = vec![Mode::zero(self.dim); self.nodes.len()];
        let order = self.postorder();
        for v in order {
            let node = &self.nodes[v];
            out[v] = match &node.kind {
                NodeKind::End { j, sign } => Mode::unit(self.dim, *j, *sign),
                NodeKind::Internal { .. } => {
                    let mut m = Mode::zero(self.dim);
                    for &c in &node.children {
                        m = m.add(&out[c]);
                    }
                    m
                }
                NodeKind::Counterterm { j, sign } => {
                    let mut m = Mode::zero(self.dim);
                    for &c in &node.children {
                        m = m.add(&out[c]);
                    }
                    m.sub(&Mode::unit(self.dim, *j, *sign))
                }
            };
        }
        out
    }

    pub fn postorder(&self) -> Vec<usize> {
        let mut out = Vec::with_capacity(self.nodes.len());
        let mut stack = vec![(self.root, false)];
        while let Some((v, expanded)) = stack.pop() {
            if expanded {
                out.push(v);
            } else {
                stack.push((v, true));
                for &c in &self.nodes[v].children {
                    stack.push((c, false));
                }
            }
        }
        out
    }

    pub fn order(&self) -> usize {
        self.nodes.iter().map(|n| n.kind.order()).sum()
    }

    pub fn end_count(&self) -> usize {
        self.nodes
            .iter()
            .filter(|n| matches!(n.kind, NodeKind::End { .. }))
            .count()
    }

    pub fn internal_count(&self) -> usize {
        self.nodes
            .iter()
            .filter(|n| !matches!(n.kind, NodeKind::End { .. }))
            .count()
    }

    pub fn counterterm_count(&self) -> usize {
        self.nodes
            .iter()
            .filter(|n| matches!(n.kind, NodeKind::Counterterm { .. }))
            .count()
    }

    /// Canonical recursive encoding; equality of keys is tree equivalence.
    pub fn canonical_key(&self) -> String {
        self.key_of(self.root)
    }

    pub fn key_of(&self, v: usize) -> String {
        let node = &self.nodes[v];
        let mut child_keys: Vec<String> =
            node.children.iter().map(|&c| self.key_of(c)).collect();
        child_keys.sort();
        let head = match &node.kind {
            NodeKind::End { j, sign } => format!("E{}{}", j, sign),
            NodeKind::Internal { j, order } => {
                format!("I{}.{}{}", j, order, node.line_sign)
            }
            NodeKind::Counterterm { j, sign } => format!("C{}{}", j, sign),
        };
        if child_keys.is_empty() {
            head
        } else {
            format!("{head}({})", child_keys.join(","))
        }
    }

    /// Graft a standalone subtree into this arena; returns the new root id.
    pub fn graft(&mut self, sub: &LabeledTree) -> usize {
        let base = self.nodes.len();
        for node in &sub.nodes {
            let mut n = node.clone();
            n.children = n.children.iter().map(|c| c + base).collect();
            self.nodes.push(n);
        }
        base + sub.root
    }

    /// Nodes whose exiting line lies on the unperturbed shell (momentum
    /// `sigma_l e_{j_l}`): those lines carry no propagator and sit on the
    /// marker scale -1.
    pub fn on_shell(&self, momenta: &[Mode]) -> Vec<bool> {
        self.nodes
            .iter()
            .enumerate()
            .map(|(v, n)| momenta[v].is_unit(n.kind.component(), n.line_sign))
            .collect()
    }

    /// Pruned tree: drop the on-shell subtrees hanging from counterterm
    /// nodes that are reachable from the root without crossing a shell line.
    /// Returns the surviving node set.
    pub fn pruned_nodes(&self) -> Vec<bool> {
        let momenta = self.momenta();
        let shell = self.on_shell(&momenta);
        let mut keep = vec![false; self.nodes.len()];
        let mut stack = vec![self.root];
        while let Some(v) = stack.pop() {
            keep[v] = true;
            match &self.nodes[v].kind {
                NodeKind::Counterterm { .. } => {
                    for &c in &self.nodes[v].children {
                        if !shell[c] {
                            stack.push(c);
                        }
                    }
                }
                _ => {
                    for &c in &self.nodes[v].children {
                        stack.push(c);
                    }
                }
            }
        }
        keep
    }

    /// Ids of end nodes that survive pruning.
    pub fn pruned_end_ids(&self) -> Vec<usize> {
        let keep = self.pruned_nodes();
        (0..self.nodes.len())
            .filter(|&v| keep[v] && matches!(self.nodes[v].kind, NodeKind::End { .. }))
            .collect()
    }

    /// Signed end-node counts of the pruned tree, per component:
    /// `(plus_j, minus_j)`.
    pub fn pruned_end_counts(&self) -> Vec<(usize, usize)> {
        let keep = self.pruned_nodes();
        let mut counts = vec![(0usize, 0usize); self.dim];
        for (v, node) in self.nodes.iter().enumerate() {
            if !keep[v] {
                continue;
            }
            if let NodeKind::End { j, sign } = node.kind {
                match sign {
                    Sign::Plus => counts[j - 1].0 += 1,
                    Sign::Minus => counts[j - 1].1 += 1,
                }
            }
        }
        counts
    }
}

/// A class of equivalent trees: the canonical representative, the number of
/// distinct planar orderings it stands for, and the cached value without the
/// root-line propagator.
#[derive(Clone, Debug)]
pub struct TreeClass<K: RealScalar> {
    pub key: String,
    pub tree: Rc<LabeledTree>,
    pub multiplicity: u64,
    pub order: usize,
    pub root_momentum: Mode,
    pub root_sign: Sign,
    /// Product of node factors and propagators of all lines except the line
    /// exiting the root node.
    pub subvalue: CoeffPoly<K>,
}

impl<K: RealScalar> TreeClass<K> {
    pub fn root_is_end(&self) -> bool {
        matches!(self.tree.nodes[self.tree.root].kind, NodeKind::End { .. })
    }

    pub fn root_is_counterterm(&self) -> bool {
        matches!(
            self.tree.nodes[self.tree.root].kind,
            NodeKind::Counterterm { .. }
        )
    }
}

#[derive(Clone, PartialEq, Eq, Hash)]
struct SubKey {
    k: usize,
    j: usize,
    nu: Mode,
    sign: Sign,
}

/// Force-term view used by the enumerator: arity, per-slot (component, sign)
/// labels, and the normalized coefficient. Real-variant slots ignore signs.
pub(crate) struct TermSlots<K: RealScalar> {
    pub(crate) order: usize,
    pub(crate) slots: Vec<(usize, Sign)>,
    pub(crate) factor: CScalar<K>,
}

pub struct Enumerator<'m, K: RealScalar> {
    pub view: &'m ModelView<'m, K>,
    terms: HashMap<(usize, Sign), Vec<Rc<TermSlots<K>>>>,
    memo: RefCell<HashMap<SubKey, Rc<Vec<Rc<TreeClass<K>>>>>>,
}

fn factorial_u64(n: usize) -> u64 {
    (1..=n as u64).product()
}

fn factorial_big(n: usize) -> num_rational::BigRational {
    let mut acc = num_bigint::BigInt::from(1);
    for i in 2..=n {
        acc *= num_bigint::BigInt::from(i as u64);
    }
    num_rational::BigRational::from_integer(acc)
}

impl<'m, K: RealScalar> Enumerator<'m, K> {
    pub fn new(view: &'m ModelView<'m, K>) -> Self {
        let mut terms: HashMap<(usize, Sign), Vec<Rc<TermSlots<K>>>> = HashMap::new();
        match view {
            ModelView::Real(m) => {
                for ((j, s), coeff) in &m.fcoeffs {
                    let arity = sidx_norm(s);
                    let mut slots = Vec::new();
                    let mut fact = num_rational::BigRational::from_integer(1.into());
                    for (i, &si) in s.iter().enumerate() {
                        for _ in 0..si {
                            slots.push((i + 1, Sign::Plus));
                        }
                        fact *= factorial_big(si as usize);
                    }
                    fact /= factorial_big(arity);
                    let factor = coeff.mul_real(&K::from_rat(&fact));
                    let term = Rc::new(TermSlots {
                        order: arity - 1,
                        slots,
                        factor,
                    });
                    // the same real term feeds lines of either sign label
                    for sign in Sign::both() {
                        terms.entry((*j, sign)).or_default().push(term.clone());
                    }
                }
            }
            ModelView::Zw { force, .. } => {
                for ((sign, j, sp, sm), coeff) in &force.entries {
                    let arity = sidx_norm(sp) + sidx_norm(sm);
                    let mut slots = Vec::new();
                    let mut fact = num_rational::BigRational::from_integer(1.into());
                    for (i, &si) in sp.iter().enumerate() {
                        for _ in 0..si {
                            slots.push((i + 1, Sign::Plus));
                        }
                        fact *= factorial_big(si as usize);
                    }
                    for (i, &si) in sm.iter().enumerate() {
                        for _ in 0..si {
                            slots.push((i + 1, Sign::Minus));
                        }
                        fact *= factorial_big(si as usize);
                    }
                    fact /= factorial_big(arity);
                    let factor = coeff.mul_real(&K::from_rat(&fact));
                    terms
                        .entry((*j, *sign))
                        .or_default()
                        .push(Rc::new(TermSlots {
                            order: arity - 1,
                            slots,
                            factor,
                        }));
                }
            }
        }
        Enumerator {
            view,
            terms,
            memo: RefCell::new(HashMap::new()),
        }
    }

    fn dim(&self) -> usize {
        self.view.spec().d
    }

    fn variant(&self) -> Variant {
        self.view.variant()
    }

    /// Real variant: minimizer sign of a line; complex variant: the sign is
    /// the requested label itself.
    fn line_sign_for(&self, j: usize, nu: &Mode, requested: Sign) -> Sign {
        match self.variant() {
            Variant::RealX => self.view.spec().small_divisor(j, nu).1,
            Variant::ComplexZw => requested,
        }
    }

    /// Propagator denominator of an off-shell line.
    pub(crate) fn denominator(&self, j: usize, sign: Sign, nu: &Mode) -> Result<K> {
        let spec = self.view.spec();
        let wn = spec.omega_dot(nu);
        let wj = &spec.omega[j - 1];
        let den = match self.variant() {
            Variant::RealX => wn.mul(&wn).sub(&wj.mul(wj)),
            Variant::ComplexZw => {
                let signed = if sign == Sign::Plus { wn } else { wn.neg() };
                signed.sub(wj)
            }
        };
        if den.is_denominator_zero() {
            return Err(Error::ResonantMode { j, nu: nu.to_repr() });
        }
        Ok(den)
    }

    /// All inequivalent subtrees whose exiting line carries the given order,
    /// component, momentum and sign label.
    pub fn classes(
        &self,
        k: usize,
        j: usize,
        nu: &Mode,
        sign: Sign,
    ) -> Result<Rc<Vec<Rc<TreeClass<K>>>>> {
        // a subtree of order k has at most k + 1 pruned end nodes
        if nu.norm1() > k as i64 + 1 {
            return Ok(Rc::new(Vec::new()));
        }
        let sign = self.line_sign_for(j, nu, sign);
        let key = SubKey {
            k,
            j,
            nu: nu.clone(),
            sign,
        };
        if let Some(v) = self.memo.borrow().get(&key) {
            return Ok(v.clone());
        }
        let built = Rc::new(self.build_classes(k, j, nu, sign)?);
        self.memo.borrow_mut().insert(key, built.clone());
        Ok(built)
    }

    fn build_classes(
        &self,
        k: usize,
        j: usize,
        nu: &Mode,
        sign: Sign,
    ) -> Result<Vec<Rc<TreeClass<K>>>> {
        let dim = self.dim();
        let mut out = Vec::new();

        if k == 0 {
            // end node: only the on-shell line of its own sign
            if nu.is_unit(j, sign) {
                let tree = LabeledTree {
                    variant: self.variant(),
                    dim,
                    nodes: vec![TreeNode {
                        kind: NodeKind::End { j, sign },
                        line_sign: sign,
                        children: Vec::new(),
                    }],
                    root: 0,
                };
                let key = tree.canonical_key();
                out.push(Rc::new(TreeClass {
                    key,
                    tree: Rc::new(tree),
                    multiplicity: 1,
                    order: 0,
                    root_momentum: nu.clone(),
                    root_sign: sign,
                    subvalue: CoeffPoly::symbol(dim, j, sign),
                }));
            }
            return Ok(out);
        }

        // internal nodes of positive order
        if let Some(terms) = self.terms.get(&(j, sign)) {
            for term in terms.clone() {
                if term.order > k {
                    continue;
                }
                let budget = k - term.order;
                let mut chosen: Vec<Rc<TreeClass<K>>> = Vec::new();
                let mut results = Vec::new();
                self.fill_slots(
                    &term.slots,
                    0,
                    budget,
                    nu.clone(),
                    &mut chosen,
                    &mut |children| {
                        results.push(children.to_vec());
                        Ok(())
                    },
                )?;
                for children in results {
                    out.push(self.assemble_internal(j, sign, &term, &children)?);
                }
            }
        }

        // counterterm node: exit line off shell, two entering internal lines
        // of the same component and sign, one of them on shell
        if !nu.is_unit(j, sign) {
            let shell = Mode::unit(dim, j, sign);
            for k1 in 1..k {
                let k2 = k - k1;
                let etas = self.classes(k1, j, &shell, sign)?;
                if etas.is_empty() {
                    continue;
                }
                let conts = self.classes(k2, j, nu, sign)?;
                for eta in etas.iter() {
                    if eta.root_is_end() {
                        continue;
                    }
                    for cont in conts.iter() {
                        if cont.root_is_end() {
                            continue;
                        }
                        out.push(self.assemble_counterterm(j, sign, eta, cont, nu)?);
                    }
                }
            }
        }

        Ok(out)
    }

    pub(crate) fn term_list(&self, j: usize, sign: Sign) -> &[Rc<TermSlots<K>>] {
        self.terms.get(&(j, sign)).map(|v| v.as_slice()).unwrap_or(&[])
    }

    /// Recursive slot filling: for each slot pick an order, a momentum and a
    /// class; within runs of identical slot labels the choice tokens must be
    /// non-decreasing so every multiset is generated exactly once.
    pub(crate) fn fill_slots(
        &self,
        slots: &[(usize, Sign)],
        idx: usize,
        rem_order: usize,
        rem_mode: Mode,
        chosen: &mut Vec<Rc<TreeClass<K>>>,
        emit: &mut dyn FnMut(&[Rc<TreeClass<K>>]) -> Result<()>,
    ) -> Result<()> {
        if idx == slots.len() {
            if rem_order == 0 && rem_mode.is_zero() {
                emit(chosen)?;
            }
            return Ok(());
        }
        // remaining slots absorb at most one pruned end unit per order unit
        // plus one per slot
        let rest = (slots.len() - idx) as i64;
        if rem_mode.norm1() > rem_order as i64 + rest {
            return Ok(());
        }
        let (cj, csign) = slots[idx];
        let same_group = idx > 0 && slots[idx - 1] == slots[idx];
        let last = idx + 1 == slots.len();
        for k_i in 0..=rem_order {
            let modes: Vec<Mode> = if last {
                if rem_order != k_i {
                    continue;
                }
                vec![rem_mode.clone()]
            } else {
                crate::mode_ball(self.dim(), k_i as i64 + 1)
            };
            for nu_i in modes {
                if nu_i.norm1() > k_i as i64 + 1 {
                    continue;
                }
                let classes = self.classes(k_i, cj, &nu_i, csign)?;
                for class in classes.iter() {
                    // a line on the unperturbed shell entering a node of
                    // positive order must exit an end node
                    let on_shell = class.root_momentum.is_unit(cj, class.root_sign);
                    if on_shell && !class.root_is_end() {
                        continue;
                    }
                    if same_group {
                        let prev = chosen.last().unwrap();
                        if token_of(prev) > token_of(class) {
                            continue;
                        }
                    }
                    chosen.push(class.clone());
                    self.fill_slots(
                        slots,
                        idx + 1,
                        rem_order - k_i,
                        rem_mode.sub(&nu_i),
                        chosen,
                        emit,
                    )?;
                    chosen.pop();
                }
            }
        }
        Ok(())
    }

    fn assemble_internal(
        &self,
        j: usize,
        sign: Sign,
        term: &TermSlots<K>,
        children: &[Rc<TreeClass<K>>],
    ) -> Result<Rc<TreeClass<K>>> {
        let dim = self.dim();
        let mut tree = LabeledTree {
            variant: self.variant(),
            dim,
            nodes: Vec::new(),
            root: 0,
        };
        let mut child_ids = Vec::new();
        let mut value = CoeffPoly::constant(dim, term.factor.clone());
        let mut momentum = Mode::zero(dim);
        let mut order = term.order;
        // orderings of the child multiset
        let mut sorted_keys: Vec<&str> = children.iter().map(|c| c.key.as_str()).collect();
        sorted_keys.sort();
        let mut perms = factorial_u64(children.len());
        let mut run = 1usize;
        for i in 1..sorted_keys.len() {
            if sorted_keys[i] == sorted_keys[i - 1] {
                run += 1;
            } else {
                perms /= factorial_u64(run);
                run = 1;
            }
        }
        perms /= factorial_u64(run);
        let mut mult: u64 = perms;

        for child in children {
            mult = mult
                .checked_mul(child.multiplicity)
                .expect("multiplicity overflow");
            order += child.order;
            momentum = momentum.add(&child.root_momentum);
            let id = tree.graft(&child.tree);
            child_ids.push(id);
            let prop = self.child_propagator(child)?;
            value = value.mul(&child.subvalue)?.mul_scalar(&prop);
        }
        let root = tree.nodes.len();
        tree.nodes.push(TreeNode {
            kind: NodeKind::Internal {
                j,
                order: term.order,
            },
            line_sign: sign,
            children: child_ids,
        });
        tree.root = root;
        let key = tree.canonical_key();
        Ok(Rc::new(TreeClass {
            key,
            tree: Rc::new(tree),
            multiplicity: mult,
            order,
            root_momentum: momentum,
            root_sign: sign,
            subvalue: value,
        }))
    }

    fn assemble_counterterm(
        &self,
        j: usize,
        sign: Sign,
        eta: &Rc<TreeClass<K>>,
        cont: &Rc<TreeClass<K>>,
        nu: &Mode,
    ) -> Result<Rc<TreeClass<K>>> {
        let dim = self.dim();
        let mut tree = LabeledTree {
            variant: self.variant(),
            dim,
            nodes: Vec::new(),
            root: 0,
        };
        let e_id = tree.graft(&eta.tree);
        let c_id = tree.graft(&cont.tree);
        let root = tree.nodes.len();
        tree.nodes.push(TreeNode {
            kind: NodeKind::Counterterm { j, sign },
            line_sign: sign,
            children: vec![e_id, c_id],
        });
        tree.root = root;

        // the shell line carries no propagator; the continuation line does
        let prop = self.child_propagator(cont)?;
        let raw = eta
            .subvalue
            .mul(&cont.subvalue)?
            .mul_scalar(&prop)
            .scale_pow2(-1)
            .neg();
        let value = raw.div_symbol(j, sign)?;
        // the two children are always distinct (one on shell, one off)
        let mult = 2u64
            .checked_mul(eta.multiplicity)
            .and_then(|m| m.checked_mul(cont.multiplicity))
            .expect("multiplicity overflow");
        let key = tree.canonical_key();
        Ok(Rc::new(TreeClass {
            key,
            tree: Rc::new(tree),
            multiplicity: mult,
            order: eta.order + cont.order,
            root_momentum: nu.clone(),
            root_sign: sign,
            subvalue: value,
        }))
    }

    pub(crate) fn child_propagator(&self, child: &Rc<TreeClass<K>>) -> Result<CScalar<K>> {
        let j = child.tree.nodes[child.tree.root].kind.component();
        if child.root_momentum.is_unit(j, child.root_sign) {
            return Ok(CScalar::one());
        }
        let den = self.denominator(j, child.root_sign, &child.root_momentum)?;
        Ok(CScalar::from_real(K::one().div(&den)))
    }

    /// Sum of class values times multiplicities, including the root-line
    /// propagator: the tree-side series coefficient for an off-shell mode.
    pub fn x_coefficient(
        &self,
        k: usize,
        j: usize,
        nu: &Mode,
        sign: Sign,
    ) -> Result<CoeffPoly<K>> {
        let dim = self.dim();
        let classes = self.classes(k, j, nu, sign)?;
        let mut acc = CoeffPoly::zero(dim);
        if classes.is_empty() {
            return Ok(acc);
        }
        let sign = self.line_sign_for(j, nu, sign);
        let den = self.denominator(j, sign, nu)?;
        let g = CScalar::from_real(K::one().div(&den));
        for class in classes.iter() {
            let term = class
                .subvalue
                .mul_scalar(&CScalar::from_i64(class.multiplicity as i64));
            acc = acc.add(&term)?;
        }
        Ok(acc.mul_scalar(&g))
    }

    /// Counterterm from the trees with shell root momentum `sigma e_j`:
    /// minus the class sum divided by the matching amplitude symbol.
    pub fn counterterm(&self, k: usize, j: usize, sign: Sign) -> Result<CoeffPoly<K>> {
        let dim = self.dim();
        let shell = Mode::unit(dim, j, sign);
        let classes = self.classes(k, j, &shell, sign)?;
        let mut acc = CoeffPoly::zero(dim);
        for class in classes.iter() {
            let term = class
                .subvalue
                .mul_scalar(&CScalar::from_i64(class.multiplicity as i64));
            acc = acc.add(&term)?;
        }
        acc.neg().div_symbol(j, sign)
    }
}

fn token_of<K: RealScalar>(c: &TreeClass<K>) -> (usize, Mode, String) {
    (c.order, c.root_momentum.clone(), c.key.clone())
}

// ---------------------------------------------------------------------------
// Standalone evaluation and label transformations

/// Divisor of the line exiting node v, in the formulation the tree carries.
pub fn line_divisor<K: RealScalar>(
    view: &ModelView<K>,
    tree: &LabeledTree,
    momenta: &[Mode],
    v: usize,
) -> K {
    let spec = view.spec();
    let node = &tree.nodes[v];
    let j = node.kind.component();
    match tree.variant {
        Variant::RealX => spec.small_divisor(j, &momenta[v]).0,
        Variant::ComplexZw => spec.zw_divisor(j, node.line_sign, &momenta[v]),
    }
}

fn line_denominator<K: RealScalar>(
    view: &ModelView<K>,
    tree: &LabeledTree,
    momenta: &[Mode],
    v: usize,
) -> Result<K> {
    let spec = view.spec();
    let node = &tree.nodes[v];
    let j = node.kind.component();
    let wn = spec.omega_dot(&momenta[v]);
    let wj = &spec.omega[j - 1];
    let den = match tree.variant {
        Variant::RealX => wn.mul(&wn).sub(&wj.mul(wj)),
        Variant::ComplexZw => {
            let signed = if node.line_sign == Sign::Plus {
                wn
            } else {
                wn.neg()
            };
            signed.sub(wj)
        }
    };
    if den.is_denominator_zero() {
        return Err(Error::ResonantMode {
            j,
            nu: momenta[v].to_repr(),
        });
    }
    Ok(den)
}

/// Value of a single tree: product of node factors and propagators over all
/// lines, the root line included. `scales` (with the partition) switches on
/// the scale-windowed propagators.
pub fn tree_value<K: RealScalar>(
    view: &ModelView<K>,
    tree: &LabeledTree,
    scales: Option<(&[i32], &ScalePartition<K>)>,
) -> Result<CoeffPoly<K>> {
    let dim = tree.dim;
    let momenta = tree.momenta();
    let shell = tree.on_shell(&momenta);
    let mut values: Vec<Option<CoeffPoly<K>>> = vec![None; tree.nodes.len()];
    for v in tree.postorder() {
        let node = &tree.nodes[v];
        let mut val = match &node.kind {
            NodeKind::End { j, sign } => CoeffPoly::symbol(dim, *j, *sign),
            NodeKind::Internal { j, .. } => {
                let factor = internal_factor(view, tree, &node.children, *j, node.line_sign)?;
                CoeffPoly::constant(dim, factor)
            }
            NodeKind::Counterterm { .. } => CoeffPoly::one(dim),
        };
        for &c in &node.children {
            let sub = values[c].take().expect("postorder");
            val = val.mul(&sub)?;
        }
        if let NodeKind::Counterterm { j, sign } = &node.kind {
            val = val.scale_pow2(-1).neg().div_symbol(*j, *sign)?;
        }
        // the line exiting v
        if !shell[v] {
            let den = line_denominator(view, tree, &momenta, v)?;
            val = val.mul_scalar(&CScalar::from_real(K::one().div(&den)));
        }
        if let Some((sc, part)) = scales {
            if shell[v] {
                if sc[v] != -1 {
                    return Err(Error::Assertion(
                        "shell line must carry the marker scale".into(),
                    ));
                }
            } else {
                let delta = line_divisor(view, tree, &momenta, v);
                let w = part.big_psi(&delta, sc[v])?;
                val = val.mul_scalar(&CScalar::from_real(w));
            }
        }
        values[v] = Some(val);
    }
    Ok(values[tree.root].take().expect("root value"))
}

/// Force factor of an internal node: multi-index read off the entering
/// lines, with the factorial normalization.
pub(crate) fn internal_factor<K: RealScalar>(
    view: &ModelView<K>,
    tree: &LabeledTree,
    children: &[usize],
    j: usize,
    line_sign: Sign,
) -> Result<CScalar<K>> {
    let dim = tree.dim;
    let mut fact = num_rational::BigRational::from_integer(1.into());
    let coeff = match view {
        ModelView::Real(m) => {
            let mut s: SIdx = smallvec::SmallVec::from_elem(0u16, dim);
            for &c in children {
                s[tree.nodes[c].kind.component() - 1] += 1;
            }
            for &si in s.iter() {
                fact *= factorial_big(si as usize);
            }
            fact /= factorial_big(children.len());
            m.fcoeffs.get(&(j, s.clone())).cloned().ok_or_else(|| {
                Error::Assertion(format!("no force coefficient for j={j}, s={s:?}"))
            })?
        }
        ModelView::Zw { force, .. } => {
            let mut sp: SIdx = smallvec::SmallVec::from_elem(0u16, dim);
            let mut sm: SIdx = smallvec::SmallVec::from_elem(0u16, dim);
            for &c in children {
                let comp = tree.nodes[c].kind.component();
                match tree.nodes[c].line_sign {
                    Sign::Plus => sp[comp - 1] += 1,
                    Sign::Minus => sm[comp - 1] += 1,
                }
            }
            for &si in sp.iter().chain(sm.iter()) {
                fact *= factorial_big(si as usize);
            }
            fact /= factorial_big(children.len());
            force.get(line_sign, j, &sp, &sm).cloned().ok_or_else(|| {
                Error::Assertion(format!(
                    "no force coefficient for sigma={line_sign} j={j}, s+={sp:?} s-={sm:?}"
                ))
            })?
        }
    };
    Ok(coeff.mul_real(&K::from_rat(&fact)))
}

/// Flip the sign labels of every end node and counterterm node; momenta flip
/// with them and, in the real formulation, the line signs follow as the new
/// minimizers. Involution on classes.
pub fn sign_flip<K: RealScalar>(view: &ModelView<K>, tree: &LabeledTree) -> LabeledTree {
    let mut out = tree.clone();
    for node in &mut out.nodes {
        match &mut node.kind {
            NodeKind::End { sign, .. } => *sign = sign.flip(),
            NodeKind::Counterterm { sign, .. } => *sign = sign.flip(),
            NodeKind::Internal { .. } => {}
        }
    }
    match tree.variant {
        Variant::RealX => {
            let momenta = out.momenta();
            let spec = view.spec();
            for v in 0..out.nodes.len() {
                let j = out.nodes[v].kind.component();
                let s = match &out.nodes[v].kind {
                    NodeKind::End { sign, .. } => *sign,
                    NodeKind::Counterterm { sign, .. } => *sign,
                    NodeKind::Internal { .. } => spec.small_divisor(j, &momenta[v]).1,
                };
                out.nodes[v].line_sign = s;
            }
        }
        Variant::ComplexZw => {
            for node in &mut out.nodes {
                node.line_sign = node.line_sign.flip();
            }
        }
    }
    out
}

/// All admissible scale assignments of a tree: the shell lines carry the
/// marker scale, every other line ranges over the support scales of its
/// divisor (one or two values).
pub fn scale_assignments<K: RealScalar>(
    view: &ModelView<K>,
    part: &ScalePartition<K>,
    tree: &LabeledTree,
) -> Result<Vec<Vec<i32>>> {
    let momenta = tree.momenta();
    let shell = tree.on_shell(&momenta);
    let mut per_line: Vec<Vec<i32>> = Vec::with_capacity(tree.nodes.len());
    for v in 0..tree.nodes.len() {
        if shell[v] {
            per_line.push(vec![-1]);
        } else {
            let delta = line_divisor(view, tree, &momenta, v);
            per_line.push(part.support_scales(&delta, false)?);
        }
    }
    let mut out: Vec<Vec<i32>> = vec![Vec::new()];
    for choices in per_line {
        let mut next = Vec::with_capacity(out.len() * choices.len());
        for base in &out {
            for &c in &choices {
                let mut b = base.clone();
                b.push(c);
                next.push(b);
            }
        }
        out = next;
    }
    Ok(out)
}
