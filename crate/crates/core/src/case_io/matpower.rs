//! Reader and writer for the numeric subset of MATPOWER `.m` case files.
//!
//! Only `mpc.baseMVA` and the `bus`, `gen`, `branch` and `gencost` matrices
//! are interpreted. Everything after a `%` on a line is a comment.

use std::collections::HashSet;
use std::fmt::Write as _;

use super::case::{Branch, Bus, BusKind, Generator, GridCase, QuadCost};
use super::CaseError;
use crate::topology::component_labels;

/// Parser knobs. The default is strict.
#[derive(Debug, Clone, Copy, Default)]
pub struct ParseOptions {
    /// Replace non-positive branch reactances by their absolute value (or
    /// `1e-4` when exactly zero) instead of rejecting the case. Useful when
    /// only the topology of a case is needed.
    pub abs_reactance: bool,
}

const BUS_COLS: usize = 13;
const GEN_COLS: usize = 10;
const BRANCH_COLS: usize = 11;
const GENCOST_MIN_COLS: usize = 4;

pub fn parse_matpower_case(text: &str) -> Result<GridCase, CaseError> {
    parse_matpower_case_with(text, ParseOptions::default())
}

pub fn parse_matpower_case_with(text: &str, opts: ParseOptions) -> Result<GridCase, CaseError> {
    let clean: String = text
        .lines()
        .map(|l| l.split('%').next().unwrap_or(""))
        .collect::<Vec<_>>()
        .join("\n");

    let name = case_name(&clean);
    let base_mva = scalar(&clean, "baseMVA")?;
    if !(base_mva > 0.0) {
        return Err(CaseError::MalformedBlock(format!("baseMVA must be positive, got {base_mva}")));
    }
    let bus_rows = matrix(&clean, "bus", BUS_COLS)?;
    let gen_rows = matrix(&clean, "gen", GEN_COLS)?;
    let branch_rows = matrix(&clean, "branch", BRANCH_COLS)?;
    let cost_rows = matrix(&clean, "gencost", GENCOST_MIN_COLS)?;

    let mut buses = Vec::with_capacity(bus_rows.len());
    let mut seen = HashSet::new();
    for row in &bus_rows {
        let id = bus_id(row[0], "bus")?;
        if !seen.insert(id) {
            return Err(CaseError::MalformedBlock(format!("duplicate bus id {id}")));
        }
        let kind = match row[1] as i64 {
            1 => BusKind::Pq,
            2 => BusKind::Pv,
            3 => BusKind::Ref,
            t => {
                return Err(CaseError::MalformedBlock(format!("bus {id}: unsupported bus type {t}")))
            }
        };
        buses.push(Bus {
            id,
            kind,
            pd: row[2] / base_mva,
            qd: row[3] / base_mva,
            vmax: row[11],
            vmin: row[12],
        });
    }
    let refs: Vec<usize> = buses.iter().filter(|b| b.kind == BusKind::Ref).map(|b| b.id).collect();
    let ref_bus = match refs.as_slice() {
        [] => return Err(CaseError::NoRefBus),
        [r] => *r,
        _ => {
            return Err(CaseError::MalformedBlock(format!(
                "expected exactly one reference bus, found {refs:?}"
            )))
        }
    };

    let mut branches = Vec::with_capacity(branch_rows.len());
    for (k, row) in branch_rows.iter().enumerate() {
        let from = bus_id(row[0], "branch")?;
        let to = bus_id(row[1], "branch")?;
        for end in [from, to] {
            if !seen.contains(&end) {
                return Err(CaseError::MalformedBlock(format!(
                    "branch {k} references undeclared bus {end}"
                )));
            }
        }
        if from == to {
            return Err(CaseError::MalformedBlock(format!("branch {k} is a self-loop on bus {from}")));
        }
        let r = row[2];
        let mut x = row[3];
        if !(x > 0.0) {
            if opts.abs_reactance {
                x = if x == 0.0 { 1e-4 } else { x.abs() };
            } else {
                return Err(CaseError::MalformedBlock(format!(
                    "branch {k} ({from}-{to}) has non-positive reactance {x}"
                )));
            }
        }
        let in_service = row[10] != 0.0;
        let rate_a = row[5] / base_mva;
        if in_service && !(rate_a > 0.0) {
            return Err(CaseError::MalformedBlock(format!(
                "in-service branch {k} ({from}-{to}) has no flow limit"
            )));
        }
        branches.push(Branch {
            from,
            to,
            r,
            x,
            y_mag: 1.0 / r.hypot(x),
            rate_a,
            in_service,
        });
    }

    if cost_rows.len() < gen_rows.len() {
        return Err(CaseError::MalformedBlock(format!(
            "gencost has {} rows for {} generators",
            cost_rows.len(),
            gen_rows.len()
        )));
    }
    let mut gens = Vec::new();
    for (g, (row, cost)) in gen_rows.iter().zip(&cost_rows).enumerate() {
        let bus = bus_id(row[0], "gen")?;
        if !seen.contains(&bus) {
            return Err(CaseError::MalformedBlock(format!("generator {g} at undeclared bus {bus}")));
        }
        if row[7] <= 0.0 {
            continue;
        }
        let (pmax, pmin) = (row[8] / base_mva, row[9] / base_mva);
        if pmin > pmax {
            return Err(CaseError::MalformedBlock(format!(
                "generator {g} at bus {bus} has pmin > pmax"
            )));
        }
        gens.push(Generator {
            bus,
            pmin,
            pmax,
            qmax: row[3] / base_mva,
            qmin: row[4] / base_mva,
            cost: quad_cost(cost, g, base_mva)?,
        });
    }

    let case = GridCase { name, base_mva, buses, branches, gens, ref_bus };
    check_connected(&case)?;
    Ok(case)
}

fn quad_cost(row: &[f64], g: usize, base: f64) -> Result<QuadCost, CaseError> {
    if row[0] as i64 != 2 {
        return Err(CaseError::UnsupportedCost(format!(
            "generator {g}: cost model {} is not polynomial",
            row[0]
        )));
    }
    let n = row[3];
    if n.fract() != 0.0 || !(0.0..=3.0).contains(&n) {
        return Err(CaseError::UnsupportedCost(format!(
            "generator {g}: polynomial with {n} coefficients (degree > 2)"
        )));
    }
    let n = n as usize;
    if row.len() < 4 + n {
        return Err(CaseError::MalformedBlock(format!("generator {g}: gencost row too short")));
    }
    let coeffs = &row[4..4 + n];
    let (c2, c1) = match n {
        3 => (coeffs[0], coeffs[1]),
        2 => (0.0, coeffs[0]),
        _ => (0.0, 0.0),
    };
    if c2 < 0.0 {
        return Err(CaseError::UnsupportedCost(format!("generator {g}: concave quadratic cost")));
    }
    Ok(QuadCost {
        a: c2 * (base * base),
        b: c1 * base,
    })
}

fn check_connected(case: &GridCase) -> Result<(), CaseError> {
    let index = |id: usize| case.bus_index(id).expect("endpoints validated");
    let labels = component_labels(
        case.n_buses(),
        case.branches
            .iter()
            .filter(|b| b.in_service)
            .map(|b| (index(b.from), index(b.to))),
    );
    let n_islands = labels.iter().copied().max().map_or(0, |m| m + 1);
    if n_islands > 1 {
        return Err(CaseError::DisconnectedCase { islands: n_islands });
    }
    Ok(())
}

fn bus_id(v: f64, block: &str) -> Result<usize, CaseError> {
    if v >= 1.0 && v.fract() == 0.0 && v < 1e12 {
        Ok(v as usize)
    } else {
        Err(CaseError::MalformedBlock(format!("{block}: invalid bus number {v}")))
    }
}

fn case_name(text: &str) -> String {
    text.lines()
        .find_map(|l| {
            let l = l.trim();
            let rest = l.strip_prefix("function")?;
            let (_, name) = rest.split_once('=')?;
            Some(name.trim().trim_end_matches(';').to_string())
        })
        .filter(|n| !n.is_empty())
        .unwrap_or_else(|| "case".to_string())
}

/// Byte offset just after `mpc.<name> =`, skipping look-alikes such as
/// `mpc.bus_name`.
fn find_assignment(text: &str, name: &str) -> Option<usize> {
    let key = format!("mpc.{name}");
    let mut from = 0;
    while let Some(pos) = text[from..].find(&key) {
        let after = from + pos + key.len();
        let rest = &text[after..];
        let trimmed = rest.trim_start();
        if let Some(stripped) = trimmed.strip_prefix('=') {
            return Some(text.len() - stripped.len());
        }
        from = after;
    }
    None
}

fn scalar(text: &str, name: &str) -> Result<f64, CaseError> {
    let start = find_assignment(text, name)
        .ok_or_else(|| CaseError::MalformedBlock(format!("missing mpc.{name}")))?;
    let rest = &text[start..];
    let end = rest.find([';', '\n']).unwrap_or(rest.len());
    rest[..end]
        .trim()
        .parse()
        .map_err(|_| CaseError::MalformedBlock(format!("mpc.{name} is not a number")))
}

fn matrix(text: &str, name: &str, min_cols: usize) -> Result<Vec<Vec<f64>>, CaseError> {
    let start = find_assignment(text, name)
        .ok_or_else(|| CaseError::MalformedBlock(format!("missing mpc.{name}")))?;
    let rest = text[start..].trim_start();
    let body = rest
        .strip_prefix('[')
        .ok_or_else(|| CaseError::MalformedBlock(format!("mpc.{name} is not a matrix")))?;
    let end = body
        .find(']')
        .ok_or_else(|| CaseError::MalformedBlock(format!("mpc.{name} is not terminated")))?;
    let mut rows = Vec::new();
    for (r, raw) in body[..end].split([';', '\n']).enumerate() {
        let raw = raw.trim();
        if raw.is_empty() {
            continue;
        }
        let row = raw
            .split(|c: char| c.is_whitespace() || c == ',')
            .filter(|t| !t.is_empty())
            .map(|t| {
                let v: f64 = t.parse().map_err(|_| {
                    CaseError::MalformedBlock(format!("mpc.{name} line {r}: bad number {t:?}"))
                })?;
                // Inf is legal in MATPOWER limit columns; NaN never is.
                if v.is_nan() {
                    return Err(CaseError::MalformedBlock(format!("mpc.{name}: NaN entry")));
                }
                Ok(v)
            })
            .collect::<Result<Vec<f64>, _>>()?;
        rows.push(row);
    }
    if let Some(first) = rows.first() {
        let width = first.len();
        if width < min_cols {
            return Err(CaseError::MalformedBlock(format!(
                "mpc.{name} has {width} columns, need at least {min_cols}"
            )));
        }
        if let Some((i, _)) = rows.iter().enumerate().find(|(_, r)| r.len() != width) {
            return Err(CaseError::MalformedBlock(format!("mpc.{name} row {i} is ragged")));
        }
    }
    Ok(rows)
}

/// Physical value `v` such that `forward(v) == q`, searching a few ulps around
/// the naive inverse so that writing then re-parsing is exact.
fn invert(q: f64, naive: f64, forward: impl Fn(f64) -> f64) -> f64 {
    if forward(naive) == q || !naive.is_finite() {
        return naive;
    }
    let mut up = naive;
    let mut down = naive;
    for _ in 0..8 {
        up = next_up(up);
        down = next_down(down);
        if forward(up) == q {
            return up;
        }
        if forward(down) == q {
            return down;
        }
    }
    naive
}

fn next_up(x: f64) -> f64 {
    if x == 0.0 {
        return f64::from_bits(1);
    }
    let bits = x.to_bits();
    f64::from_bits(if x > 0.0 { bits + 1 } else { bits - 1 })
}

fn next_down(x: f64) -> f64 {
    -next_up(-x)
}

/// Serialize a case back into MATPOWER syntax. `parse(write(c)) == c` holds
/// bit-exactly for cases produced by the parser.
pub fn write_matpower_case(case: &GridCase) -> String {
    let base = case.base_mva;
    let power = |q: f64| invert(q, q * base, |v| v / base);
    let mut out = String::new();
    let _ = writeln!(out, "function mpc = {}", case.name);
    let _ = writeln!(out, "mpc.version = '2';");
    let _ = writeln!(out, "mpc.baseMVA = {base:?};\n");
    let _ = writeln!(out, "%% bus_i type Pd Qd Gs Bs area Vm Va baseKV zone Vmax Vmin");
    let _ = writeln!(out, "mpc.bus = [");
    for b in &case.buses {
        let _ = writeln!(
            out,
            "\t{}\t{}\t{:?}\t{:?}\t0\t0\t1\t1\t0\t0\t1\t{:?}\t{:?};",
            b.id,
            b.kind.code(),
            power(b.pd),
            power(b.qd),
            b.vmax,
            b.vmin
        );
    }
    let _ = writeln!(out, "];\n");
    let _ = writeln!(out, "%% bus Pg Qg Qmax Qmin Vg mBase status Pmax Pmin");
    let _ = writeln!(out, "mpc.gen = [");
    for g in &case.gens {
        let _ = writeln!(
            out,
            "\t{}\t0\t0\t{:?}\t{:?}\t1\t{:?}\t1\t{:?}\t{:?};",
            g.bus,
            power(g.qmax),
            power(g.qmin),
            base,
            power(g.pmax),
            power(g.pmin)
        );
    }
    let _ = writeln!(out, "];\n");
    let _ = writeln!(out, "%% 2 startup shutdown n c2 c1 c0");
    let _ = writeln!(out, "mpc.gencost = [");
    let sq = base * base;
    for g in &case.gens {
        let c2 = invert(g.cost.a, g.cost.a / sq, |v| v * sq);
        let c1 = invert(g.cost.b, g.cost.b / base, |v| v * base);
        let _ = writeln!(out, "\t2\t0\t0\t3\t{c2:?}\t{c1:?}\t0;");
    }
    let _ = writeln!(out, "];\n");
    let _ = writeln!(out, "%% fbus tbus r x b rateA rateB rateC ratio angle status");
    let _ = writeln!(out, "mpc.branch = [");
    for br in &case.branches {
        let rate = power(br.rate_a);
        let _ = writeln!(
            out,
            "\t{}\t{}\t{:?}\t{:?}\t0\t{rate:?}\t{rate:?}\t{rate:?}\t0\t0\t{};",
            br.from,
            br.to,
            br.r,
            br.x,
            u8::from(br.in_service)
        );
    }
    let _ = writeln!(out, "];");
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) const TRIANGLE: &str = "\
function mpc = triangle
mpc.version = '2';
mpc.baseMVA = 100;
mpc.bus = [
	1	3	0	0	0	0	1	1	0	230	1	1.1	0.9;
	2	1	50	10	0	0	1	1	0	230	1	1.1	0.9;
	3	1	50	10	0	0	1	1	0	230	1	1.1	0.9;
];
mpc.gen = [
	1	0	0	100	-100	1	100	1	200	0;
];
mpc.gencost = [
	2	0	0	3	0.01	20	5;
];
mpc.branch = [
	1	2	0	1.0	0	100	100	100	0	0	1	-360	360;
	1	3	0	1.0	0	100	100	100	0	0	1	-360	360;
	2	3	0	1.0	0	100	100	100	0	0	1	-360	360;
];
";

    #[test]
    fn triangle_parses() {
        let case = parse_matpower_case(TRIANGLE).unwrap();
        assert_eq!(case.name, "triangle");
        assert_eq!(case.n_buses(), 3);
        assert_eq!(case.branches.len(), 3);
        assert_eq!(case.ref_bus, 1);
        assert_eq!(case.buses[1].pd, 0.5);
        assert_eq!(case.gens[0].pmax, 2.0);
        // constant term dropped, per-unit scaling applied
        assert!((case.gens[0].cost.a - 100.0).abs() < 1e-12);
        assert!((case.gens[0].cost.b - 2000.0).abs() < 1e-9);
    }

    #[test]
    fn undeclared_bus_is_malformed() {
        let text = TRIANGLE.replace("\t2\t3\t0\t1.0", "\t2\t9\t0\t1.0");
        assert!(matches!(parse_matpower_case(&text), Err(CaseError::MalformedBlock(_))));
    }

    #[test]
    fn missing_block_and_ragged_rows() {
        let text = TRIANGLE.replace("mpc.gencost", "mpc.gcost");
        assert!(matches!(parse_matpower_case(&text), Err(CaseError::MalformedBlock(_))));
        let text = TRIANGLE.replace("\t1\t3\t0\t1.0\t0\t100\t100\t100\t0\t0\t1\t-360\t360;", "\t1\t3\t0\t1.0\t0\t100;");
        assert!(matches!(parse_matpower_case(&text), Err(CaseError::MalformedBlock(_))));
    }

    #[test]
    fn no_reference_bus() {
        let text = TRIANGLE.replace("\t1\t3\t0\t0\t0", "\t1\t2\t0\t0\t0");
        assert!(matches!(parse_matpower_case(&text), Err(CaseError::NoRefBus)));
    }

    #[test]
    fn unsupported_costs() {
        let pwl = TRIANGLE.replace("\t2\t0\t0\t3\t0.01\t20\t5;", "\t1\t0\t0\t3\t0.01\t20\t5;");
        assert!(matches!(parse_matpower_case(&pwl), Err(CaseError::UnsupportedCost(_))));
        let cubic = TRIANGLE.replace("\t2\t0\t0\t3\t0.01\t20\t5;", "\t2\t0\t0\t4\t1\t0.01\t20\t5;");
        assert!(matches!(parse_matpower_case(&cubic), Err(CaseError::UnsupportedCost(_))));
    }

    #[test]
    fn disconnected_when_bridges_are_out() {
        let text = TRIANGLE
            .replace("\t1\t3\t0\t1.0\t0\t100\t100\t100\t0\t0\t1", "\t1\t3\t0\t1.0\t0\t100\t100\t100\t0\t0\t0")
            .replace("\t2\t3\t0\t1.0\t0\t100\t100\t100\t0\t0\t1", "\t2\t3\t0\t1.0\t0\t100\t100\t100\t0\t0\t0");
        assert!(matches!(
            parse_matpower_case(&text),
            Err(CaseError::DisconnectedCase { islands: 2 })
        ));
    }

    #[test]
    fn out_of_service_branch_is_retained() {
        let text = TRIANGLE.replace(
            "\t2\t3\t0\t1.0\t0\t100\t100\t100\t0\t0\t1",
            "\t2\t3\t0\t1.0\t0\t100\t100\t100\t0\t0\t0",
        );
        let case = parse_matpower_case(&text).unwrap();
        assert_eq!(case.branches.len(), 3);
        assert_eq!(case.live_branches(), vec![0, 1]);
    }

    #[test]
    fn write_then_parse_is_identity() {
        let case = parse_matpower_case(TRIANGLE).unwrap();
        let again = parse_matpower_case(&write_matpower_case(&case)).unwrap();
        assert_eq!(case, again);
    }
}
