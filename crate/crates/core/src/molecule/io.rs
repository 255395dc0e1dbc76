//! XYZ and MDL V2000 (SDF/MOL) readers and writers.

use std::fmt::Write as _;
use std::path::Path;

use super::{atomic_number, bond, element_symbol, MoleculeState};
use crate::error::{invalid, Error, Result};

fn perr(line: usize, msg: impl Into<String>) -> Error {
    Error::Parse { line, msg: msg.into() }
}

fn parse_element(tok: &str, line: usize) -> Result<u8> {
    if let Ok(z) = tok.parse::<u8>() {
        if element_symbol(z).is_some() {
            return Ok(z);
        }
    }
    atomic_number(tok).ok_or_else(|| perr(line, format!("unknown element '{tok}'")))
}

fn parse_f64(tok: &str, line: usize, what: &str) -> Result<f64> {
    tok.parse::<f64>()
        .map_err(|_| perr(line, format!("bad {what} '{tok}'")))
}

/// Parses an XYZ record: atom count, comment line, then `Element x y z` lines.
///
/// Element may be a symbol or an atomic number. The resulting molecule has no
/// bonds and neutral charges.
pub fn parse_xyz(text: &str) -> Result<MoleculeState> {
    let mut lines = text.lines();
    let first = lines.next().ok_or_else(|| perr(1, "empty input"))?;
    let n: usize = first
        .trim()
        .parse()
        .map_err(|_| perr(1, format!("bad atom count '{}'", first.trim())))?;
    if n == 0 {
        return Err(perr(1, "atom count must be positive"));
    }
    // comment line; absent only for malformed input
    if lines.next().is_none() {
        return Err(perr(2, "missing comment line"));
    }
    let mut coords = Vec::with_capacity(n);
    let mut types = Vec::with_capacity(n);
    for (k, raw) in lines.enumerate() {
        let line_no = k + 3;
        let line = raw.trim();
        if line.is_empty() {
            continue;
        }
        if coords.len() == n {
            return Err(perr(line_no, format!("more atoms than the declared count {n}")));
        }
        let toks: Vec<&str> = line.split_whitespace().collect();
        if toks.len() < 4 {
            return Err(perr(line_no, "expected 'Element x y z'"));
        }
        types.push(parse_element(toks[0], line_no)?);
        coords.push([
            parse_f64(toks[1], line_no, "x")?,
            parse_f64(toks[2], line_no, "y")?,
            parse_f64(toks[3], line_no, "z")?,
        ]);
    }
    if coords.len() != n {
        return Err(perr(
            text.lines().count(),
            format!("declared {n} atoms, found {}", coords.len()),
        ));
    }
    MoleculeState::from_atoms(coords, types)
}

pub fn write_xyz(m: &MoleculeState, comment: &str) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "{}", m.n_atoms());
    let _ = writeln!(s, "{}", comment.replace('\n', " "));
    for (x, &z) in m.coords.iter().zip(&m.atom_types) {
        let sym = element_symbol(z).unwrap_or("X");
        let _ = writeln!(s, "{:<2} {:.10} {:.10} {:.10}", sym, x[0], x[1], x[2]);
    }
    s
}

fn charge_from_code(code: i32) -> i8 {
    match code {
        1 => 3,
        2 => 2,
        3 => 1,
        5 => -1,
        6 => -2,
        7 => -3,
        _ => 0,
    }
}

fn code_from_charge(c: i8) -> i32 {
    match c {
        3 => 1,
        2 => 2,
        1 => 3,
        -1 => 5,
        -2 => 6,
        -3 => 7,
        _ => 0,
    }
}

fn parse_counts(line: &str, line_no: usize) -> Result<(usize, usize)> {
    let fixed = |a: usize, b: usize| line.get(a..b).and_then(|s| s.trim().parse::<usize>().ok());
    if let (Some(na), Some(nb)) = (fixed(0, 3), fixed(3, 6)) {
        return Ok((na, nb));
    }
    let toks: Vec<&str> = line.split_whitespace().collect();
    match (
        toks.first().and_then(|t| t.parse().ok()),
        toks.get(1).and_then(|t| t.parse().ok()),
    ) {
        (Some(na), Some(nb)) => Ok((na, nb)),
        _ => Err(perr(line_no, format!("bad counts line '{line}'"))),
    }
}

/// Parses the first record of a V2000 SDF/MOL text.
///
/// Reads the counts line, the atom block (`x y z symbol [mass] [charge code]`)
/// and the bond block (`a1 a2 order`, 1-based). `M  CHG` property lines
/// override atom-block charges. Bond order 4 is aromatic.
pub fn parse_sdf(text: &str) -> Result<MoleculeState> {
    let lines: Vec<&str> = text.lines().collect();
    if lines.len() < 4 {
        return Err(perr(lines.len().max(1), "missing header or counts line"));
    }
    let (na, nb) = parse_counts(lines[3], 4)?;
    if na == 0 {
        return Err(perr(4, "atom count must be positive"));
    }
    if lines.len() < 4 + na + nb {
        return Err(perr(lines.len(), "record ends before the atom/bond blocks"));
    }
    let mut coords = Vec::with_capacity(na);
    let mut types = Vec::with_capacity(na);
    let mut charges = Vec::with_capacity(na);
    for (k, line) in lines[4..4 + na].iter().enumerate() {
        let line_no = 5 + k;
        let toks: Vec<&str> = line.split_whitespace().collect();
        if toks.len() < 4 {
            return Err(perr(line_no, "expected 'x y z symbol'"));
        }
        coords.push([
            parse_f64(toks[0], line_no, "x")?,
            parse_f64(toks[1], line_no, "y")?,
            parse_f64(toks[2], line_no, "z")?,
        ]);
        types.push(parse_element(toks[3], line_no)?);
        let code = toks.get(5).and_then(|t| t.parse::<i32>().ok()).unwrap_or(0);
        charges.push(charge_from_code(code));
    }
    let mut bonds = vec![0u8; na * na];
    for (k, line) in lines[4 + na..4 + na + nb].iter().enumerate() {
        let line_no = 5 + na + k;
        let fixed = |a: usize, b: usize| line.get(a..b).and_then(|s| s.trim().parse::<usize>().ok());
        let toks: Vec<usize> = match (fixed(0, 3), fixed(3, 6), fixed(6, 9)) {
            (Some(a), Some(b), Some(c)) => vec![a, b, c],
            _ => line
                .split_whitespace()
                .take(3)
                .map(|t| t.parse::<usize>())
                .collect::<std::result::Result<_, _>>()
                .map_err(|_| perr(line_no, "expected 'a1 a2 order'"))?,
        };
        if toks.len() < 3 {
            return Err(perr(line_no, "expected 'a1 a2 order'"));
        }
        let (a, b, order) = (toks[0], toks[1], toks[2]);
        if a == 0 || b == 0 || a > na || b > na {
            return Err(perr(line_no, format!("bond references atom outside 1..={na}: {a}-{b}")));
        }
        if a == b {
            return Err(perr(line_no, format!("self-bond on atom {a}")));
        }
        if order == 0 || order >= bond::N_CLASSES {
            return Err(perr(line_no, format!("unsupported bond order {order}")));
        }
        bonds[(a - 1) * na + (b - 1)] = order as u8;
        bonds[(b - 1) * na + (a - 1)] = order as u8;
    }
    for (k, line) in lines[4 + na + nb..].iter().enumerate() {
        let line_no = 5 + na + nb + k;
        if line.starts_with("M  END") || line.starts_with("$$$$") {
            break;
        }
        if let Some(rest) = line.strip_prefix("M  CHG") {
            let vals: Vec<i64> = rest
                .split_whitespace()
                .map(|t| t.parse::<i64>())
                .collect::<std::result::Result<_, _>>()
                .map_err(|_| perr(line_no, "bad M  CHG line"))?;
            for pair in vals.get(1..).unwrap_or(&[]).chunks(2) {
                if let [idx, chg] = *pair {
                    if idx < 1 || idx as usize > na {
                        return Err(perr(line_no, format!("charge on unknown atom {idx}")));
                    }
                    charges[idx as usize - 1] = chg as i8;
                }
            }
        }
    }
    MoleculeState::new(coords, types, charges, bonds)
}

pub fn write_sdf(m: &MoleculeState, name: &str) -> String {
    let n = m.n_atoms();
    let bonds = m.bond_list();
    let mut s = String::new();
    let _ = writeln!(s, "{}", name.replace('\n', " "));
    let _ = writeln!(s, "  symcanon");
    let _ = writeln!(s);
    let _ = writeln!(s, "{:>3}{:>3}  0  0  0  0  0  0  0  0999 V2000", n, bonds.len());
    for i in 0..n {
        let x = m.coords[i];
        let sym = element_symbol(m.atom_types[i]).unwrap_or("X");
        let _ = writeln!(
            s,
            "{:>10.4}{:>10.4}{:>10.4} {:<3} 0{:>3}  0  0  0  0  0  0  0  0  0  0",
            x[0],
            x[1],
            x[2],
            sym,
            code_from_charge(m.charges[i])
        );
    }
    for (i, j, b) in &bonds {
        let _ = writeln!(s, "{:>3}{:>3}{:>3}  0", i + 1, j + 1, b);
    }
    let _ = writeln!(s, "M  END");
    let _ = writeln!(s, "$$$$");
    s
}

/// Reads a molecule, dispatching on the file extension (`.xyz`, `.sdf`, `.mol`).
pub fn read_molecule(path: &Path) -> Result<MoleculeState> {
    let text = std::fs::read_to_string(path)?;
    match path
        .extension()
        .and_then(|e| e.to_str())
        .map(|e| e.to_ascii_lowercase())
        .as_deref()
    {
        Some("xyz") => parse_xyz(&text),
        Some("sdf") | Some("mol") => parse_sdf(&text),
        other => Err(invalid(format!(
            "unrecognized molecule file extension {other:?} for {}",
            path.display()
        ))),
    }
}
