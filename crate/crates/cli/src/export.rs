//! Tab-separated exports. Floats use the shortest representation that reads
//! back to the same value, so a reparsed export is bit-exact.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use diffalloc_core::quantile::{QuantileOutcome, TransportRow};
use diffalloc_core::{Allocation, Entry, MassElement, Piece, Point, Provenance, Window};

use crate::CliError;

pub const UNALLOCATED: &str = "UNALLOCATED";

/// Unallocated remainders below this fraction of an element are not listed.
const REMAINDER_FLOOR: f64 = 1e-12;

fn coords(out: &mut String, p: &Point) {
    for c in p.coords() {
        let _ = write!(out, "\t{c}");
    }
}

fn blanks(out: &mut String, dim: usize) {
    for _ in 0..dim {
        out.push('\t');
    }
}

fn axis_names(dim: usize, prefix: &str) -> String {
    ["x", "y"][..dim]
        .iter()
        .map(|a| format!("\t{prefix}{a}"))
        .collect()
}

/// One row per piece, plus one `UNALLOCATED` row for a leftover remainder.
pub fn allocation_tsv(a: &Allocation) -> String {
    let dim = a.window.dim();
    let mut out = format!(
        "element_id{}\tmass\tfraction{}\tdest_id\tprovenance\n",
        axis_names(dim, ""),
        axis_names(dim, "dest_")
    );
    for e in &a.entries {
        let total = e.element.mass;
        for p in &e.pieces {
            let _ = write!(out, "{}", e.element.id);
            coords(&mut out, &e.element.location);
            let _ = write!(out, "\t{}\t{}", p.mass, p.mass / total);
            coords(&mut out, &p.location);
            let _ = writeln!(out, "\t{}\t{}", p.dest, p.provenance.as_str());
        }
        let rest = e.unallocated();
        if rest > REMAINDER_FLOOR * total || e.pieces.is_empty() {
            let _ = write!(out, "{}", e.element.id);
            coords(&mut out, &e.element.location);
            let _ = write!(out, "\t{}\t{}", rest, rest / total);
            blanks(&mut out, dim);
            let _ = writeln!(out, "\t{UNALLOCATED}\t-");
        }
    }
    out
}

fn parse_f64(s: &str, line: usize) -> Result<f64, CliError> {
    s.parse()
        .map_err(|_| CliError::Parse(format!("allocation export line {line}: bad number {s:?}")))
}

/// Reads an allocation export back. Element masses are the sums of their rows.
pub fn read_allocation_tsv(text: &str, w: &Window) -> Result<Allocation, CliError> {
    let dim = w.dim();
    let mut lines = text.lines().enumerate();
    let header = lines.next().map(|(_, l)| l).unwrap_or_default();
    let expected = allocation_tsv(&Allocation::new(*w, Vec::new()));
    if header != expected.trim_end() {
        return Err(CliError::Parse(format!(
            "allocation export header does not match a {dim}-dimensional window"
        )));
    }
    let mut entries: BTreeMap<usize, Entry> = BTreeMap::new();
    for (k, line) in lines {
        let n = k + 1;
        let f: Vec<&str> = line.split('\t').collect();
        if f.len() != 5 + 2 * dim {
            return Err(CliError::Parse(format!(
                "allocation export line {n}: wrong field count"
            )));
        }
        let id: usize = f[0]
            .parse()
            .map_err(|_| CliError::Parse(format!("allocation export line {n}: bad element id")))?;
        let loc: Vec<f64> = f[1..1 + dim]
            .iter()
            .map(|s| parse_f64(s, n))
            .collect::<Result<_, _>>()?;
        let loc = w
            .point(&loc)
            .map_err(|e| CliError::Parse(format!("allocation export line {n}: {e}")))?;
        let mass = parse_f64(f[1 + dim], n)?;
        let entry = entries.entry(id).or_insert_with(|| Entry {
            element: MassElement::new(id, loc, 0.0),
            offered: 0.0,
            pieces: Vec::new(),
        });
        entry.offered += mass;
        entry.element.mass += mass;
        entry.element.remaining += mass;
        let dest = f[3 + 2 * dim];
        if dest == UNALLOCATED {
            continue;
        }
        let dloc: Vec<f64> = f[3 + dim..3 + 2 * dim]
            .iter()
            .map(|s| parse_f64(s, n))
            .collect::<Result<_, _>>()?;
        let provenance = match f[4 + 2 * dim] {
            "DISC" => Provenance::Disc,
            "DIFF" => Provenance::Diff,
            other => {
                return Err(CliError::Parse(format!(
                    "allocation export line {n}: unknown provenance {other:?}"
                )))
            }
        };
        entry.pieces.push(Piece {
            dest: dest
                .parse()
                .map_err(|_| CliError::Parse(format!("allocation export line {n}: bad dest_id")))?,
            location: w
                .point(&dloc)
                .map_err(|e| CliError::Parse(format!("allocation export line {n}: {e}")))?,
            mass,
            provenance,
        });
    }
    Ok(Allocation::new(*w, entries.into_values().collect()))
}

pub fn chi_tsv(q: &QuantileOutcome) -> String {
    let dim = q.allocation.window.dim();
    let mut out = format!(
        "chi_id{}\tweight\tsource_mass\tdestination_mass\tuniformity\n",
        axis_names(dim, "")
    );
    for (i, a) in q.pairing.chi.points.atoms().iter().enumerate() {
        let c = q.cells.iter().find(|c| c.chi == i);
        let _ = write!(out, "{i}");
        coords(&mut out, &a.location);
        match c {
            Some(c) => {
                let _ = writeln!(
                    out,
                    "\t{}\t{}\t{}\t{}",
                    a.mass, c.source_mass, c.destination_mass, c.uniformity
                );
            }
            None => {
                let _ = writeln!(out, "\t{}\t0\t0\t0", a.mass);
            }
        }
    }
    out
}

pub fn transport_tsv(rows: &[TransportRow], dim: usize) -> String {
    let mut out = format!(
        "element_id{}\tmass\tchi_id\tdest_element{}\n",
        axis_names(dim, ""),
        axis_names(dim, "dest_")
    );
    for r in rows {
        let _ = write!(out, "{}", r.element);
        coords(&mut out, &r.source);
        let _ = write!(out, "\t{}\t{}\t{}", r.mass, r.chi, r.dest_element);
        coords(&mut out, &r.dest);
        out.push('\n');
    }
    out
}

pub fn samples_tsv(shifted: &[f64], reference: &[f64]) -> String {
    let mut out = String::from("sample\tshifted\treference\n");
    for i in 0..shifted.len().max(reference.len()) {
        let s = shifted.get(i).map_or(String::new(), |v| v.to_string());
        let r = reference.get(i).map_or(String::new(), |v| v.to_string());
        let _ = writeln!(out, "{i}\t{s}\t{r}");
    }
    out
}
