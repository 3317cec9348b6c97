//! Minimal XYZ reader: count line, comment line, then `symbol x y z` rows.

use escn_core::{Error, Result};

/// Symbols for atomic numbers 1..=100, indexed by Z - 1.
pub const ELEMENTS: [&str; 100] = [
    "H", "He", "Li", "Be", "B", "C", "N", "O", "F", "Ne", "Na", "Mg", "Al", "Si", "P", "S", "Cl",
    "Ar", "K", "Ca", "Sc", "Ti", "V", "Cr", "Mn", "Fe", "Co", "Ni", "Cu", "Zn", "Ga", "Ge", "As",
    "Se", "Br", "Kr", "Rb", "Sr", "Y", "Zr", "Nb", "Mo", "Tc", "Ru", "Rh", "Pd", "Ag", "Cd", "In",
    "Sn", "Sb", "Te", "I", "Xe", "Cs", "Ba", "La", "Ce", "Pr", "Nd", "Pm", "Sm", "Eu", "Gd", "Tb",
    "Dy", "Ho", "Er", "Tm", "Yb", "Lu", "Hf", "Ta", "W", "Re", "Os", "Ir", "Pt", "Au", "Hg", "Tl",
    "Pb", "Bi", "Po", "At", "Rn", "Fr", "Ra", "Ac", "Th", "Pa", "U", "Np", "Pu", "Am", "Cm", "Bk",
    "Cf", "Es", "Fm",
];

pub fn atomic_number(symbol: &str) -> Option<u32> {
    ELEMENTS
        .iter()
        .position(|&s| s == symbol || s.eq_ignore_ascii_case(symbol))
        .map(|i| i as u32 + 1)
}

#[derive(Debug, Clone)]
pub struct XyzStructure {
    pub comment: String,
    pub numbers: Vec<u32>,
    pub positions: Vec<[f64; 3]>,
}

pub fn parse_xyz(text: &str) -> Result<XyzStructure> {
    let mut lines = text.lines().enumerate();
    let (_, count_line) = lines
        .next()
        .ok_or_else(|| Error::input("line 1: empty file, expected atom count"))?;
    let count: usize = count_line
        .trim()
        .parse()
        .map_err(|_| Error::input(format!("line 1: invalid atom count {count_line:?}")))?;
    if count == 0 {
        return Err(Error::input("line 1: atom count must be at least 1"));
    }
    let (_, comment) = lines
        .next()
        .ok_or_else(|| Error::input("line 2: missing comment line"))?;
    let mut numbers = Vec::with_capacity(count);
    let mut positions = Vec::with_capacity(count);
    for i in 0..count {
        let line_no = i + 3;
        let (_, line) = lines.next().ok_or_else(|| {
            Error::input(format!("line {line_no}: expected {count} atom lines, got {i}"))
        })?;
        let fields: Vec<&str> = line.split_whitespace().collect();
        if fields.len() != 4 {
            return Err(Error::input(format!(
                "line {line_no}: expected `symbol x y z`, got {} fields",
                fields.len()
            )));
        }
        let z = atomic_number(fields[0]).ok_or_else(|| {
            Error::input(format!("line {line_no}: unknown element symbol {:?}", fields[0]))
        })?;
        let mut pos = [0.0; 3];
        for (k, field) in fields[1..].iter().enumerate() {
            pos[k] = field.parse().map_err(|_| {
                Error::input(format!("line {line_no}: invalid coordinate {field:?}"))
            })?;
        }
        numbers.push(z);
        positions.push(pos);
    }
    for (extra, (idx, line)) in lines.enumerate() {
        if !line.trim().is_empty() {
            let _ = extra;
            return Err(Error::input(format!(
                "line {}: unexpected trailing content {line:?}",
                idx + 1
            )));
        }
    }
    Ok(XyzStructure {
        comment: comment.to_string(),
        numbers,
        positions,
    })
}
