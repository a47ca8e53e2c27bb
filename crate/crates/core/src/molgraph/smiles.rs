//! SMILES reader and writer for the organic subset.
//!
//! Stereo marks (`/`, `\`, `@`) are accepted and dropped, isotopes and atom
//! classes are ignored. Dot-disconnected input and wildcard atoms are
//! rejected since every sample must be a single connected molecule.

use std::io::BufRead;
use std::path::Path;

use super::{implicit_hydrogens, Atom, Bond, BondOrder, Element, MolError, MolecularGraph};

struct PendingRing {
    atom: usize,
    order: Option<BondOrder>,
}

struct Parser<'a> {
    text: &'a [u8],
    pos: usize,
    atoms: Vec<Atom>,
    /// Bonds with a flag recording whether the order was written explicitly.
    bonds: Vec<(Bond, bool)>,
}

pub fn parse_smiles(text: &str) -> Result<MolecularGraph, MolError> {
    let text = text.trim();
    if text.is_empty() {
        return Err(MolError::Syntax {
            pos: 0,
            msg: "empty SMILES".into(),
        });
    }
    if !text.is_ascii() {
        return Err(MolError::Syntax {
            pos: 0,
            msg: "non-ASCII input".into(),
        });
    }
    let mut p = Parser {
        text: text.as_bytes(),
        pos: 0,
        atoms: Vec::new(),
        bonds: Vec::new(),
    };
    p.parse()?;
    finish(p.atoms, p.bonds)
}

impl Parser<'_> {
    fn err<T>(&self, msg: impl Into<String>) -> Result<T, MolError> {
        Err(MolError::Syntax {
            pos: self.pos,
            msg: msg.into(),
        })
    }

    fn peek(&self) -> Option<u8> {
        self.text.get(self.pos).copied()
    }

    fn parse(&mut self) -> Result<(), MolError> {
        let mut stack: Vec<usize> = Vec::new();
        let mut prev: Option<usize> = None;
        let mut pending_bond: Option<BondOrder> = None;
        let mut rings: [Option<PendingRing>; 100] = std::array::from_fn(|_| None);

        while let Some(c) = self.peek() {
            match c {
                b'(' => {
                    let Some(p) = prev else {
                        return self.err("branch before any atom");
                    };
                    if pending_bond.is_some() {
                        return self.err("bond before branch");
                    }
                    stack.push(p);
                    self.pos += 1;
                }
                b')' => {
                    let Some(p) = stack.pop() else {
                        return self.err("unmatched ')'");
                    };
                    if pending_bond.is_some() {
                        return self.err("dangling bond before ')'");
                    }
                    prev = Some(p);
                    self.pos += 1;
                }
                b'-' | b'=' | b'#' | b':' | b'/' | b'\\' => {
                    if pending_bond.is_some() {
                        return self.err("two consecutive bond symbols");
                    }
                    if prev.is_none() {
                        return self.err("bond before any atom");
                    }
                    pending_bond = Some(match c {
                        b'=' => BondOrder::Double,
                        b'#' => BondOrder::Triple,
                        b':' => BondOrder::Aromatic,
                        _ => BondOrder::Single,
                    });
                    self.pos += 1;
                }
                b'$' => return Err(MolError::Unsupported("quadruple bond '$'".into())),
                b'.' => {
                    return Err(MolError::Unsupported(
                        "disconnected structures ('.')".into(),
                    ))
                }
                b'*' => return Err(MolError::Unsupported("wildcard atom '*'".into())),
                b'0'..=b'9' | b'%' => {
                    let Some(p) = prev else {
                        return self.err("ring closure before any atom");
                    };
                    let num = self.ring_number()?;
                    match rings[num].take() {
                        Some(open) => {
                            let order = match (open.order, pending_bond) {
                                (Some(a), Some(b)) if a != b => {
                                    return self.err(format!("conflicting bond orders on ring {num}"))
                                }
                                (Some(a), _) => Some(a),
                                (None, b) => b,
                            };
                            if open.atom == p {
                                return self.err("ring closure to the same atom");
                            }
                            self.add_bond(open.atom, p, order);
                        }
                        None => {
                            rings[num] = Some(PendingRing {
                                atom: p,
                                order: pending_bond,
                            });
                        }
                    }
                    pending_bond = None;
                }
                _ => {
                    let atom = self.atom()?;
                    let idx = self.atoms.len();
                    self.atoms.push(atom);
                    if let Some(p) = prev {
                        self.add_bond(p, idx, pending_bond.take());
                    } else if pending_bond.is_some() {
                        return self.err("bond before first atom");
                    }
                    prev = Some(idx);
                }
            }
        }
        if pending_bond.is_some() {
            return self.err("dangling bond at end of input");
        }
        if !stack.is_empty() {
            return self.err("unmatched '('");
        }
        if let Some(num) = rings.iter().position(|r| r.is_some()) {
            return self.err(format!("unclosed ring bond {num}"));
        }
        if self.atoms.is_empty() {
            return self.err("no atoms");
        }
        Ok(())
    }

    fn add_bond(&mut self, a: usize, b: usize, order: Option<BondOrder>) {
        let explicit = order.is_some();
        let order = order.unwrap_or(if self.atoms[a].aromatic && self.atoms[b].aromatic {
            BondOrder::Aromatic
        } else {
            BondOrder::Single
        });
        self.bonds.push((Bond::new(a, b, order), explicit));
    }

    fn ring_number(&mut self) -> Result<usize, MolError> {
        let c = self.text[self.pos];
        if c == b'%' {
            let digits = self.text.get(self.pos + 1..self.pos + 3);
            match digits {
                Some(d) if d.iter().all(u8::is_ascii_digit) => {
                    self.pos += 3;
                    Ok(((d[0] - b'0') * 10 + (d[1] - b'0')) as usize)
                }
                _ => self.err("'%' must be followed by two digits"),
            }
        } else {
            self.pos += 1;
            Ok((c - b'0') as usize)
        }
    }

    fn atom(&mut self) -> Result<Atom, MolError> {
        let c = self.text[self.pos];
        if c == b'[' {
            return self.bracket_atom();
        }
        let two = self.text.get(self.pos..self.pos + 2);
        if two == Some(b"Cl") || two == Some(b"Br") {
            self.pos += 2;
            let el = if two == Some(b"Cl") {
                Element::Cl
            } else {
                Element::Br
            };
            return Ok(Atom::new(el));
        }
        let atom = match c {
            b'B' => Atom::new(Element::B),
            b'C' => Atom::new(Element::C),
            b'N' => Atom::new(Element::N),
            b'O' => Atom::new(Element::O),
            b'P' => Atom::new(Element::P),
            b'S' => Atom::new(Element::S),
            b'F' => Atom::new(Element::F),
            b'I' => Atom::new(Element::I),
            b'b' => Atom::aromatic(Element::B),
            b'c' => Atom::aromatic(Element::C),
            b'n' => Atom::aromatic(Element::N),
            b'o' => Atom::aromatic(Element::O),
            b'p' => Atom::aromatic(Element::P),
            b's' => Atom::aromatic(Element::S),
            b')' | b']' => return self.err("unexpected character"),
            _ if c.is_ascii_alphabetic() => {
                return Err(MolError::Unsupported(format!(
                    "element outside the organic subset at position {}",
                    self.pos
                )))
            }
            _ => return self.err(format!("unexpected character '{}'", c as char)),
        };
        self.pos += 1;
        Ok(atom)
    }

    fn bracket_atom(&mut self) -> Result<Atom, MolError> {
        let start = self.pos;
        let Some(len) = self.text[start..].iter().position(|&c| c == b']') else {
            return self.err("unterminated bracket atom");
        };
        let body = &self.text[start + 1..start + len];
        self.pos = start + len + 1;
        let mut i = 0;
        while i < body.len() && body[i].is_ascii_digit() {
            i += 1; // isotope
        }
        let rest = &body[i..];
        if rest.first() == Some(&b'*') {
            return Err(MolError::Unsupported("wildcard atom '*'".into()));
        }
        let (element, aromatic, sym_len) = bracket_symbol(rest).ok_or_else(|| {
            let sym: String = rest
                .iter()
                .take_while(|c| c.is_ascii_alphabetic())
                .map(|&c| c as char)
                .collect();
            MolError::Unsupported(format!("element '{sym}'"))
        })?;
        i += sym_len;
        while i < body.len() && body[i] == b'@' {
            i += 1;
        }
        // chirality classes like @TH1 / @SP2 / @OH12
        if i > 0 && body[i - 1] == b'@' {
            while i < body.len() && body[i].is_ascii_uppercase() && body[i] != b'H' {
                i += 1;
            }
            while i < body.len() && body[i].is_ascii_digit() && body.get(i - 1) != Some(&b'H') {
                i += 1;
            }
        }
        let mut hydrogens = 0u8;
        if i < body.len() && body[i] == b'H' {
            i += 1;
            hydrogens = 1;
            if i < body.len() && body[i].is_ascii_digit() {
                hydrogens = body[i] - b'0';
                i += 1;
            }
        }
        let mut charge: i32 = 0;
        if i < body.len() && (body[i] == b'+' || body[i] == b'-') {
            let sign = if body[i] == b'+' { 1 } else { -1 };
            let sym = body[i];
            i += 1;
            let mut mag = 1;
            if i < body.len() && body[i].is_ascii_digit() {
                mag = 0;
                while i < body.len() && body[i].is_ascii_digit() {
                    mag = mag * 10 + (body[i] - b'0') as i32;
                    i += 1;
                }
            } else {
                while i < body.len() && body[i] == sym {
                    mag += 1;
                    i += 1;
                }
            }
            charge = sign * mag;
        }
        if i < body.len() && body[i] == b':' {
            i += 1;
            while i < body.len() && body[i].is_ascii_digit() {
                i += 1;
            }
        }
        if i != body.len() {
            self.pos = start + 1 + i;
            return self.err("malformed bracket atom");
        }
        if !(-4..=4).contains(&charge) {
            return self.err("formal charge out of range");
        }
        Ok(Atom {
            element,
            formal_charge: charge as i8,
            explicit_hydrogens: Some(hydrogens),
            aromatic,
        })
    }
}

fn bracket_symbol(rest: &[u8]) -> Option<(Element, bool, usize)> {
    // a lowercase letter right after the first one always belongs to the symbol
    let two_letter = rest.len() >= 2 && rest[1].is_ascii_lowercase();
    if two_letter {
        if let Ok(two) = std::str::from_utf8(&rest[..2]) {
            if let Some(e) = Element::from_symbol(two) {
                return Some((e, false, 2));
            }
        }
        return None;
    }
    let c = *rest.first()?;
    let upper = (c as char).to_ascii_uppercase().to_string();
    let e = Element::from_symbol(&upper)?;
    if c.is_ascii_lowercase() {
        if !e.aromatic_allowed() {
            return None;
        }
        Some((e, true, 1))
    } else {
        Some((e, false, 1))
    }
}

fn finish(atoms: Vec<Atom>, bonds: Vec<(Bond, bool)>) -> Result<MolecularGraph, MolError> {
    let (plain, explicit): (Vec<Bond>, Vec<bool>) = bonds.into_iter().unzip();
    let g = MolecularGraph::build_unchecked(atoms, plain)?;
    if !g.is_connected() {
        return Err(MolError::Unsupported("disconnected structure".into()));
    }
    // implied aromatic bonds outside rings (e.g. biaryl links) are single
    let mut bonds = g.bonds().to_vec();
    let mut changed = false;
    for (bi, bond) in bonds.iter_mut().enumerate() {
        if bond.order == BondOrder::Aromatic && !explicit[bi] && !g.bond_in_ring(bi) {
            bond.order = BondOrder::Single;
            changed = true;
        }
    }
    let mut atoms = g.atoms().to_vec();
    let g = if changed {
        MolecularGraph::build_unchecked(atoms.clone(), bonds)?
    } else {
        g
    };
    // a bracket hydrogen count equal to the implied count carries no information
    let mut normalized = false;
    for (i, atom) in atoms.iter_mut().enumerate() {
        if let Some(h) = atom.explicit_hydrogens {
            if atom.formal_charge == 0 {
                let bond_sum: u32 = g
                    .neighbors(i)
                    .iter()
                    .map(|&(_, bi)| g.bonds()[bi].order.valence_contribution())
                    .sum();
                if implicit_hydrogens(atom, bond_sum) == h as u32 {
                    atom.explicit_hydrogens = None;
                    normalized = true;
                }
            }
        }
    }
    let g = if normalized {
        MolecularGraph::build_unchecked(atoms, g.bonds().to_vec())?
    } else {
        g
    };
    for i in 0..g.atom_count() {
        g.check_valence(i)?;
    }
    Ok(g)
}

/// Writes SMILES by depth-first traversal from atom 0, visiting neighbors
/// in ascending index order.
pub fn write_smiles(graph: &MolecularGraph) -> String {
    let ranks: Vec<u64> = (0..graph.atom_count() as u64).collect();
    write_smiles_ranked(graph, &ranks)
}

/// Writes SMILES starting from the atom of lowest rank and visiting
/// neighbors in ascending rank order. Ranks must be distinct.
pub fn write_smiles_ranked(graph: &MolecularGraph, ranks: &[u64]) -> String {
    let n = graph.atom_count();
    if n == 0 {
        return String::new();
    }
    let start = (0..n).min_by_key(|&i| ranks[i]).unwrap();
    let sorted_neighbors = |u: usize| -> Vec<(usize, usize)> {
        let mut v = graph.neighbors(u).to_vec();
        v.sort_by_key(|&(nb, _)| ranks[nb]);
        v
    };

    // First pass: DFS tree, visitation order and ring-closure bonds.
    let mut visited = vec![false; n];
    let mut order = Vec::with_capacity(n);
    let mut children: Vec<Vec<(usize, usize)>> = vec![Vec::new(); n];
    let mut closures: Vec<Vec<usize>> = vec![Vec::new(); n]; // bond indices per atom
    let mut tree_bond = vec![false; graph.bond_count()];
    fn dfs(
        u: usize,
        sorted: &dyn Fn(usize) -> Vec<(usize, usize)>,
        visited: &mut [bool],
        order: &mut Vec<usize>,
        children: &mut [Vec<(usize, usize)>],
        tree_bond: &mut [bool],
    ) {
        visited[u] = true;
        order.push(u);
        for (v, bi) in sorted(u) {
            if !visited[v] {
                tree_bond[bi] = true;
                children[u].push((v, bi));
                dfs(v, sorted, visited, order, children, tree_bond);
            }
        }
    }
    dfs(
        start,
        &sorted_neighbors,
        &mut visited,
        &mut order,
        &mut children,
        &mut tree_bond,
    );
    let mut position = vec![0usize; n];
    for (k, &a) in order.iter().enumerate() {
        position[a] = k;
    }
    for (bi, bond) in graph.bonds().iter().enumerate() {
        if !tree_bond[bi] {
            closures[bond.a].push(bi);
            closures[bond.b].push(bi);
        }
    }
    for (a, list) in closures.iter_mut().enumerate() {
        list.sort_by_key(|&bi| (position[graph.bonds()[bi].other(a)], bi));
    }

    // Second pass: emit.
    let mut out = String::new();
    let mut digit_of_bond: Vec<Option<usize>> = vec![None; graph.bond_count()];
    let mut digit_in_use = [false; 100];
    fn emit(
        u: usize,
        graph: &MolecularGraph,
        children: &[Vec<(usize, usize)>],
        closures: &[Vec<usize>],
        digit_of_bond: &mut [Option<usize>],
        digit_in_use: &mut [bool; 100],
        out: &mut String,
    ) {
        out.push_str(&atom_token(graph, u));
        for &bi in &closures[u] {
            let bond = &graph.bonds()[bi];
            match digit_of_bond[bi] {
                Some(d) => {
                    push_ring_digit(out, d);
                    digit_in_use[d] = false;
                }
                None => {
                    let d = (1..100).find(|&d| !digit_in_use[d]).expect("ring digits exhausted");
                    digit_in_use[d] = true;
                    digit_of_bond[bi] = Some(d);
                    out.push_str(bond_token(graph, bond));
                    push_ring_digit(out, d);
                }
            }
        }
        let kids = &children[u];
        for (k, &(v, bi)) in kids.iter().enumerate() {
            let last = k + 1 == kids.len();
            if !last {
                out.push('(');
            }
            out.push_str(bond_token(graph, &graph.bonds()[bi]));
            emit(v, graph, children, closures, digit_of_bond, digit_in_use, out);
            if !last {
                out.push(')');
            }
        }
    }
    emit(
        start,
        graph,
        &children,
        &closures,
        &mut digit_of_bond,
        &mut digit_in_use,
        &mut out,
    );
    out
}

fn push_ring_digit(out: &mut String, d: usize) {
    if d < 10 {
        out.push(char::from(b'0' + d as u8));
    } else {
        out.push('%');
        out.push_str(&format!("{d:02}"));
    }
}

fn bond_token(graph: &MolecularGraph, bond: &Bond) -> &'static str {
    let both_aromatic = graph.atom(bond.a).aromatic && graph.atom(bond.b).aromatic;
    match bond.order {
        BondOrder::Single if both_aromatic => "-",
        BondOrder::Single => "",
        BondOrder::Double => "=",
        BondOrder::Triple => "#",
        BondOrder::Aromatic if both_aromatic => "",
        BondOrder::Aromatic => ":",
    }
}

fn atom_token(graph: &MolecularGraph, i: usize) -> String {
    let atom = graph.atom(i);
    let sym = if atom.aromatic {
        atom.element.symbol().to_ascii_lowercase()
    } else {
        atom.element.symbol().to_string()
    };
    if atom.explicit_hydrogens.is_none() && atom.formal_charge == 0 {
        return sym;
    }
    let mut s = format!("[{sym}");
    let h = graph.hydrogen_count(i);
    if h == 1 {
        s.push('H');
    } else if h > 1 {
        s.push_str(&format!("H{h}"));
    }
    match atom.formal_charge {
        0 => {}
        1 => s.push('+'),
        -1 => s.push('-'),
        c if c > 0 => s.push_str(&format!("+{c}")),
        c => s.push_str(&format!("-{}", -c)),
    }
    s.push(']');
    s
}

/// Reads a molecule file: one SMILES per line, `#` comments and blank lines
/// skipped. Returns the line number (1-based) with each parse result.
pub fn read_smiles_file(
    path: &Path,
) -> std::io::Result<Vec<(usize, String, Result<MolecularGraph, MolError>)>> {
    let file = std::fs::File::open(path)?;
    let mut out = Vec::new();
    for (k, line) in std::io::BufReader::new(file).lines().enumerate() {
        let line = line?;
        let trimmed = line.trim();
        if trimmed.is_empty() || trimmed.starts_with('#') {
            continue;
        }
        // first whitespace-delimited field is the SMILES; the rest may be a name
        let smiles = trimmed.split_whitespace().next().unwrap_or("").to_string();
        let parsed = parse_smiles(&smiles);
        out.push((k + 1, smiles, parsed));
    }
    Ok(out)
}
