//! Molecular graphs: atoms, bonds, valence rules, SMILES I/O, ring
//! perception and graph isomorphism.
//!
//! Graphs are immutable once built. [`MolecularGraph::new`] validates the
//! structural invariants (distinct in-range endpoints, no parallel bonds,
//! connectivity, element valence limits) and perceives the smallest set of
//! smallest rings, so every graph handed to the rest of the pipeline is
//! already well formed.

mod iso;
mod rings;
mod smiles;

use std::fmt;

use thiserror::Error;

pub use iso::{
    canonical_smiles, find_isomorphism, graph_isomorphic, graph_isomorphic_colored,
    refine_classes, MAX_ISO_ATOMS,
};
pub use rings::perceive_rings;
pub use smiles::{parse_smiles, read_smiles_file, write_smiles, write_smiles_ranked};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MolError {
    #[error("SMILES syntax error at position {pos}: {msg}")]
    Syntax { pos: usize, msg: String },
    #[error("valence error on atom {atom} ({element}): valence {valence} exceeds maximum {max}")]
    Valence {
        atom: usize,
        element: Element,
        valence: u32,
        max: u32,
    },
    #[error("unsupported SMILES feature: {0}")]
    Unsupported(String),
    #[error("graph has {atoms} atoms, above the limit of {limit}")]
    SizeLimit { atoms: usize, limit: usize },
    #[error("invalid graph: {0}")]
    InvalidGraph(String),
}

/// Supported elements: the SMILES organic subset.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Element {
    B,
    C,
    N,
    O,
    P,
    S,
    F,
    Cl,
    Br,
    I,
}

impl Element {
    pub const ALL: [Element; 10] = [
        Element::B,
        Element::C,
        Element::N,
        Element::O,
        Element::P,
        Element::S,
        Element::F,
        Element::Cl,
        Element::Br,
        Element::I,
    ];

    pub fn symbol(self) -> &'static str {
        match self {
            Element::B => "B",
            Element::C => "C",
            Element::N => "N",
            Element::O => "O",
            Element::P => "P",
            Element::S => "S",
            Element::F => "F",
            Element::Cl => "Cl",
            Element::Br => "Br",
            Element::I => "I",
        }
    }

    pub fn from_symbol(sym: &str) -> Option<Element> {
        Element::ALL.into_iter().find(|e| e.symbol() == sym)
    }

    pub fn atomic_number(self) -> u8 {
        match self {
            Element::B => 5,
            Element::C => 6,
            Element::N => 7,
            Element::O => 8,
            Element::P => 15,
            Element::S => 16,
            Element::F => 9,
            Element::Cl => 17,
            Element::Br => 35,
            Element::I => 53,
        }
    }

    /// Average atomic mass in daltons.
    pub fn mass(self) -> f64 {
        match self {
            Element::B => 10.811,
            Element::C => 12.011,
            Element::N => 14.007,
            Element::O => 15.999,
            Element::P => 30.974,
            Element::S => 32.065,
            Element::F => 18.998,
            Element::Cl => 35.453,
            Element::Br => 79.904,
            Element::I => 126.904,
        }
    }

    /// Whether the element may be written lowercase (aromatic) without brackets.
    pub fn aromatic_allowed(self) -> bool {
        matches!(
            self,
            Element::B | Element::C | Element::N | Element::O | Element::P | Element::S
        )
    }

    fn default_valences(self) -> &'static [u32] {
        match self {
            Element::B => &[3],
            Element::C => &[4],
            Element::N => &[3, 5],
            Element::O => &[2],
            Element::P => &[3, 5],
            Element::S => &[2, 4, 6],
            Element::F | Element::Cl | Element::Br | Element::I => &[1],
        }
    }

    /// Allowed valences after adjusting for a formal charge.
    pub fn allowed_valences(self, charge: i8) -> Vec<u32> {
        let c = charge as i32;
        self.default_valences()
            .iter()
            .map(|&v| {
                let v = v as i32;
                let adj = match self {
                    Element::B => v - c,
                    Element::C => v - c.abs(),
                    _ => v + c,
                };
                adj.max(0) as u32
            })
            .collect()
    }

    pub fn max_valence(self, charge: i8) -> u32 {
        self.allowed_valences(charge).into_iter().max().unwrap_or(0)
    }
}

impl fmt::Display for Element {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.symbol())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum BondOrder {
    Single,
    Double,
    Triple,
    Aromatic,
}

impl BondOrder {
    /// Contribution to the valence sum; aromatic bonds count as one (the
    /// shared pi electron is handled in the implicit-hydrogen rule).
    pub fn valence_contribution(self) -> u32 {
        match self {
            BondOrder::Single | BondOrder::Aromatic => 1,
            BondOrder::Double => 2,
            BondOrder::Triple => 3,
        }
    }

    pub fn index(self) -> usize {
        match self {
            BondOrder::Single => 0,
            BondOrder::Double => 1,
            BondOrder::Triple => 2,
            BondOrder::Aromatic => 3,
        }
    }

    /// Bond order as a real number (aromatic = 1.5).
    pub fn as_f64(self) -> f64 {
        match self {
            BondOrder::Single => 1.0,
            BondOrder::Double => 2.0,
            BondOrder::Triple => 3.0,
            BondOrder::Aromatic => 1.5,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Atom {
    pub element: Element,
    pub formal_charge: i8,
    /// Hydrogen count fixed by a bracket atom. `None` means the count is
    /// implied by the element's default valence.
    pub explicit_hydrogens: Option<u8>,
    pub aromatic: bool,
}

impl Atom {
    pub fn new(element: Element) -> Self {
        Atom {
            element,
            formal_charge: 0,
            explicit_hydrogens: None,
            aromatic: false,
        }
    }

    pub fn aromatic(element: Element) -> Self {
        Atom {
            aromatic: true,
            ..Atom::new(element)
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Bond {
    pub a: usize,
    pub b: usize,
    pub order: BondOrder,
}

impl Bond {
    pub fn new(a: usize, b: usize, order: BondOrder) -> Self {
        Bond { a, b, order }
    }

    pub fn other(&self, atom: usize) -> usize {
        if self.a == atom {
            self.b
        } else {
            self.a
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MolecularGraph {
    atoms: Vec<Atom>,
    bonds: Vec<Bond>,
    /// Per atom: (neighbor, bond index), sorted by neighbor.
    adjacency: Vec<Vec<(usize, usize)>>,
    rings: Vec<Vec<usize>>,
}

impl MolecularGraph {
    /// Builds and validates a graph. The empty graph is accepted.
    pub fn new(atoms: Vec<Atom>, bonds: Vec<Bond>) -> Result<Self, MolError> {
        let g = Self::build_unchecked(atoms, bonds)?;
        for i in 0..g.atoms.len() {
            g.check_valence(i)?;
        }
        if !g.is_connected() {
            return Err(MolError::InvalidGraph("graph is disconnected".into()));
        }
        Ok(g)
    }

    /// Builds a graph checking only the structural bond invariants. Valence
    /// and connectivity are left to the caller.
    pub(crate) fn build_unchecked(atoms: Vec<Atom>, bonds: Vec<Bond>) -> Result<Self, MolError> {
        let n = atoms.len();
        let mut adjacency = vec![Vec::new(); n];
        for (bi, bond) in bonds.iter().enumerate() {
            if bond.a >= n || bond.b >= n {
                return Err(MolError::InvalidGraph(format!(
                    "bond {bi} references atom out of range"
                )));
            }
            if bond.a == bond.b {
                return Err(MolError::InvalidGraph(format!("bond {bi} is a self-loop")));
            }
            if adjacency[bond.a].iter().any(|&(nb, _)| nb == bond.b) {
                return Err(MolError::InvalidGraph(format!(
                    "duplicate bond between atoms {} and {}",
                    bond.a, bond.b
                )));
            }
            adjacency[bond.a].push((bond.b, bi));
            adjacency[bond.b].push((bond.a, bi));
        }
        for nbrs in &mut adjacency {
            nbrs.sort_unstable();
        }
        let mut g = MolecularGraph {
            atoms,
            bonds,
            adjacency,
            rings: Vec::new(),
        };
        g.rings = rings::perceive(&g);
        Ok(g)
    }

    pub fn atoms(&self) -> &[Atom] {
        &self.atoms
    }

    pub fn atom(&self, i: usize) -> &Atom {
        &self.atoms[i]
    }

    pub fn bonds(&self) -> &[Bond] {
        &self.bonds
    }

    pub fn rings(&self) -> &[Vec<usize>] {
        &self.rings
    }

    pub fn atom_count(&self) -> usize {
        self.atoms.len()
    }

    pub fn bond_count(&self) -> usize {
        self.bonds.len()
    }

    pub fn is_empty(&self) -> bool {
        self.atoms.is_empty()
    }

    /// (neighbor, bond index) pairs of atom `i`, sorted by neighbor.
    pub fn neighbors(&self, i: usize) -> &[(usize, usize)] {
        &self.adjacency[i]
    }

    pub fn degree(&self, i: usize) -> usize {
        self.adjacency[i].len()
    }

    pub fn bond_between(&self, a: usize, b: usize) -> Option<&Bond> {
        self.adjacency[a]
            .iter()
            .find(|&&(nb, _)| nb == b)
            .map(|&(_, bi)| &self.bonds[bi])
    }

    fn bond_valence_sum(&self, i: usize) -> u32 {
        self.adjacency[i]
            .iter()
            .map(|&(_, bi)| self.bonds[bi].order.valence_contribution())
            .sum()
    }

    /// Total hydrogen count on atom `i` (explicit or implied).
    pub fn hydrogen_count(&self, i: usize) -> u32 {
        let atom = &self.atoms[i];
        match atom.explicit_hydrogens {
            Some(h) => h as u32,
            None => implicit_hydrogens(atom, self.bond_valence_sum(i)),
        }
    }

    /// Bond-order sum plus hydrogens.
    pub fn valence(&self, i: usize) -> u32 {
        self.bond_valence_sum(i) + self.hydrogen_count(i)
    }

    pub(crate) fn check_valence(&self, i: usize) -> Result<(), MolError> {
        let atom = &self.atoms[i];
        let valence = self.valence(i);
        let max = atom.element.max_valence(atom.formal_charge);
        if valence > max {
            return Err(MolError::Valence {
                atom: i,
                element: atom.element,
                valence,
                max,
            });
        }
        Ok(())
    }

    pub fn is_connected(&self) -> bool {
        if self.atoms.is_empty() {
            return true;
        }
        let mut seen = vec![false; self.atoms.len()];
        let mut stack = vec![0usize];
        seen[0] = true;
        let mut count = 1;
        while let Some(u) = stack.pop() {
            for &(v, _) in &self.adjacency[u] {
                if !seen[v] {
                    seen[v] = true;
                    count += 1;
                    stack.push(v);
                }
            }
        }
        count == self.atoms.len()
    }

    /// Whether the bond lies on a cycle (is not a bridge).
    pub fn bond_in_ring(&self, bond: usize) -> bool {
        self.rings.iter().any(|ring| ring_contains_bond(ring, &self.bonds[bond]))
    }

    pub fn atom_in_ring(&self, atom: usize) -> bool {
        self.rings.iter().any(|r| r.contains(&atom))
    }

    /// Cycle rank |E| - |V| + 1 of a connected graph.
    pub fn cycle_rank(&self) -> usize {
        if self.atoms.is_empty() {
            return 0;
        }
        (self.bonds.len() + 1).saturating_sub(self.atoms.len())
    }

    /// Subgraph induced by `atoms` restricted to `bonds` (bond indices of
    /// this graph). Atoms are renumbered in the order given.
    pub fn subgraph(&self, atoms: &[usize], bonds: &[usize]) -> Result<MolecularGraph, MolError> {
        let mut map = vec![usize::MAX; self.atoms.len()];
        for (new, &old) in atoms.iter().enumerate() {
            map[old] = new;
        }
        let new_atoms = atoms.iter().map(|&i| self.atoms[i].clone()).collect();
        let mut new_bonds = Vec::with_capacity(bonds.len());
        for &bi in bonds {
            let b = &self.bonds[bi];
            if map[b.a] == usize::MAX || map[b.b] == usize::MAX {
                return Err(MolError::InvalidGraph(format!(
                    "bond {bi} leaves the selected atom set"
                )));
            }
            new_bonds.push(Bond::new(map[b.a], map[b.b], b.order));
        }
        MolecularGraph::build_unchecked(new_atoms, new_bonds)
    }

    /// Heavy-atom molecular weight plus hydrogens.
    pub fn molecular_weight(&self) -> f64 {
        const H_MASS: f64 = 1.008;
        (0..self.atoms.len())
            .map(|i| self.atoms[i].element.mass() + H_MASS * self.hydrogen_count(i) as f64)
            .sum()
    }
}

pub(crate) fn ring_contains_bond(ring: &[usize], bond: &Bond) -> bool {
    let n = ring.len();
    (0..n).any(|k| {
        let (x, y) = (ring[k], ring[(k + 1) % n]);
        (x == bond.a && y == bond.b) || (x == bond.b && y == bond.a)
    })
}

/// Implied hydrogens for an atom whose count is not fixed by brackets.
pub(crate) fn implicit_hydrogens(atom: &Atom, bond_sum: u32) -> u32 {
    let valences = atom.element.allowed_valences(atom.formal_charge);
    if atom.aromatic {
        // one valence unit goes to the aromatic pi system
        let target = valences[0].saturating_sub(1);
        return target.saturating_sub(bond_sum);
    }
    valences
        .iter()
        .find(|&&v| v >= bond_sum)
        .map(|&v| v - bond_sum)
        .unwrap_or(0)
}
