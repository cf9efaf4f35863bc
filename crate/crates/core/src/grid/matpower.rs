//! MATPOWER `.m` case tables.
//!
//! Only the `mpc.baseMVA`, `mpc.bus`, `mpc.gen`, `mpc.branch` and optional
//! `mpc.genfuel` assignments are interpreted. Other assignments are still
//! tokenized so syntax errors anywhere in the file are reported.

use std::collections::{HashMap, HashSet};
use std::fmt::Write;

use super::{
    check_case, Branch, Bus, BusId, BusKind, CaseError, Component, ComponentKind, GridCase,
    Remodel, RemodelReason,
};

const BUS_COLS: usize = 13;
const GEN_COLS: usize = 8;
const BRANCH_COLS: usize = 11;

#[derive(Debug)]
enum Value {
    Scalar(f64),
    Matrix(Vec<Vec<f64>>),
    Cells(Vec<String>),
    Text,
}

#[derive(Debug)]
struct Assignment {
    line: usize,
    value: Value,
}

fn parse_err(line: usize, message: impl Into<String>) -> CaseError {
    CaseError::Parse {
        line,
        message: message.into(),
    }
}

/// Removes `%` comments, leaving quoted strings alone.
fn strip_comment(line: &str) -> &str {
    let mut in_quote = false;
    for (i, ch) in line.char_indices() {
        match ch {
            '\'' | '"' => in_quote = !in_quote,
            '%' if !in_quote => return &line[..i],
            _ => {}
        }
    }
    line
}

fn parse_number(tok: &str, line: usize) -> Result<f64, CaseError> {
    match tok {
        "Inf" | "inf" | "+Inf" => Ok(f64::INFINITY),
        "-Inf" | "-inf" => Ok(f64::NEG_INFINITY),
        _ => tok
            .parse::<f64>()
            .map_err(|_| parse_err(line, format!("invalid number `{tok}`"))),
    }
}

fn scan(text: &str) -> Result<HashMap<String, Assignment>, CaseError> {
    let mut out = HashMap::new();
    let lines: Vec<&str> = text.lines().collect();
    let mut i = 0;
    while i < lines.len() {
        let lineno = i + 1;
        let line = strip_comment(lines[i]).trim();
        i += 1;
        if line.is_empty() || line.starts_with("function") {
            continue;
        }
        let Some(rest) = line.strip_prefix("mpc.") else {
            continue;
        };
        let (name, rhs) = rest
            .split_once('=')
            .ok_or_else(|| parse_err(lineno, "expected `=` in assignment"))?;
        let name = name.trim().to_string();
        if name.is_empty() || !name.chars().all(|c| c.is_ascii_alphanumeric() || c == '_') {
            return Err(parse_err(lineno, format!("invalid field name `{name}`")));
        }
        let rhs = rhs.trim();

        let value = if let Some(body) = rhs.strip_prefix('[') {
            let (rows, next) = collect_block(&lines, i, body, ']', lineno)?;
            i = next;
            Value::Matrix(parse_matrix(&rows)?)
        } else if let Some(body) = rhs.strip_prefix('{') {
            let (rows, next) = collect_block(&lines, i, body, '}', lineno)?;
            i = next;
            Value::Cells(parse_cells(&rows)?)
        } else if rhs.starts_with('\'') || rhs.starts_with('"') {
            Value::Text
        } else {
            let tok = rhs.trim_end_matches(';').trim();
            Value::Scalar(parse_number(tok, lineno)?)
        };
        out.insert(
            name,
            Assignment {
                line: lineno,
                value,
            },
        );
    }
    Ok(out)
}

/// Collects `(line number, content)` pairs up to the closing delimiter.
fn collect_block<'a>(
    lines: &[&'a str],
    mut next: usize,
    first: &'a str,
    close: char,
    start: usize,
) -> Result<(Vec<(usize, String)>, usize), CaseError> {
    let mut rows = Vec::new();
    let mut current = first.to_string();
    let mut lineno = start;
    loop {
        if let Some(pos) = current.find(close) {
            let tail = current[pos + 1..].trim().trim_end_matches(';').trim();
            if !tail.is_empty() {
                return Err(parse_err(
                    lineno,
                    format!("unexpected `{tail}` after `{close}`"),
                ));
            }
            rows.push((lineno, current[..pos].to_string()));
            return Ok((rows, next));
        }
        rows.push((lineno, current));
        if next >= lines.len() {
            return Err(parse_err(
                start,
                format!("unterminated block, missing `{close}`"),
            ));
        }
        current = strip_comment(lines[next]).to_string();
        next += 1;
        lineno = next;
    }
}

fn parse_matrix(rows: &[(usize, String)]) -> Result<Vec<Vec<f64>>, CaseError> {
    let mut out: Vec<Vec<f64>> = Vec::new();
    for (lineno, text) in rows {
        for row in text.split(';') {
            let vals = row
                .split(|c: char| c.is_whitespace() || c == ',')
                .filter(|t| !t.is_empty())
                .map(|t| parse_number(t, *lineno))
                .collect::<Result<Vec<_>, _>>()?;
            if vals.is_empty() {
                continue;
            }
            if let Some(first) = out.first() {
                if first.len() != vals.len() {
                    return Err(parse_err(
                        *lineno,
                        format!("row has {} columns, expected {}", vals.len(), first.len()),
                    ));
                }
            }
            out.push(vals);
        }
    }
    Ok(out)
}

fn parse_cells(rows: &[(usize, String)]) -> Result<Vec<String>, CaseError> {
    let mut out = Vec::new();
    for (lineno, text) in rows {
        let mut rest = text.as_str();
        loop {
            rest = rest.trim_start_matches(|c: char| c.is_whitespace() || c == ';' || c == ',');
            if rest.is_empty() {
                break;
            }
            let q = rest.chars().next().unwrap();
            if q != '\'' && q != '"' {
                return Err(parse_err(*lineno, "cell entries must be quoted strings"));
            }
            let body = &rest[1..];
            let end = body
                .find(q)
                .ok_or_else(|| parse_err(*lineno, "unterminated string"))?;
            out.push(body[..end].to_string());
            rest = &body[end + 1..];
        }
    }
    Ok(out)
}

fn table<'a>(
    fields: &'a HashMap<String, Assignment>,
    name: &str,
    min_cols: usize,
) -> Result<&'a Vec<Vec<f64>>, CaseError> {
    let a = fields
        .get(name)
        .ok_or_else(|| CaseError::Schema(format!("missing table mpc.{name}")))?;
    let Value::Matrix(rows) = &a.value else {
        return Err(CaseError::Schema(format!("mpc.{name} is not a matrix")));
    };
    if let Some(first) = rows.first() {
        if first.len() < min_cols {
            return Err(CaseError::Schema(format!(
                "mpc.{name} has {} columns, needs at least {min_cols}",
                first.len()
            )));
        }
    }
    Ok(rows)
}

fn bus_id(v: f64, line: usize, what: &str) -> Result<BusId, CaseError> {
    if v.fract() != 0.0 || v < 0.0 || v > BusId::MAX as f64 {
        return Err(parse_err(line, format!("{what} `{v}` is not a bus number")));
    }
    Ok(v as BusId)
}

/// Parses MATPOWER case text into a validated [`GridCase`].
pub fn parse_matpower(text: &str, name: &str) -> Result<GridCase, CaseError> {
    let fields = scan(text)?;

    let base_mva = match fields.get("baseMVA") {
        Some(Assignment {
            value: Value::Scalar(v),
            ..
        }) => *v,
        Some(a) => return Err(parse_err(a.line, "baseMVA must be a scalar")),
        None => return Err(CaseError::Schema("missing mpc.baseMVA".into())),
    };
    if !(base_mva > 0.0) {
        return Err(CaseError::Schema(format!(
            "baseMVA must be positive, got {base_mva}"
        )));
    }

    let bus_rows = table(&fields, "bus", BUS_COLS)?;
    let gen_rows = table(&fields, "gen", GEN_COLS)?;
    let branch_rows = table(&fields, "branch", BRANCH_COLS)?;
    let bus_line = fields["bus"].line;
    let gen_line = fields["gen"].line;
    let branch_line = fields["branch"].line;

    let fuels = match fields.get("genfuel") {
        Some(Assignment {
            value: Value::Cells(c),
            ..
        }) => {
            if c.len() != gen_rows.len() {
                return Err(CaseError::Schema(format!(
                    "mpc.genfuel has {} entries for {} generators",
                    c.len(),
                    gen_rows.len()
                )));
            }
            Some(c)
        }
        Some(a) => return Err(parse_err(a.line, "mpc.genfuel must be a cell array")),
        None => None,
    };

    let mut buses = Vec::with_capacity(bus_rows.len());
    let mut loads = Vec::new();
    let mut isolated = HashSet::new();
    for row in bus_rows {
        let id = bus_id(row[0], bus_line, "bus id")?;
        let kind = match row[1] as i64 {
            1 => BusKind::PQ,
            2 => BusKind::PV,
            3 => BusKind::Slack,
            4 => {
                isolated.insert(id);
                continue;
            }
            t => {
                return Err(parse_err(
                    bus_line,
                    format!("bus {id} has unknown type {t}"),
                ))
            }
        };
        buses.push(Bus {
            id,
            kind,
            v_setpoint: row[7],
            angle_setpoint: row[8].to_radians(),
            v_max: row[11],
            v_min: row[12],
            gs: row[4] / base_mva,
            bs: row[5] / base_mva,
        });
        let (pd, qd) = (row[2], row[3]);
        if pd != 0.0 || qd != 0.0 {
            loads.push(Component {
                id: format!("l{id}"),
                kind: ComponentKind::Load,
                bus: id,
                p: -pd / base_mva,
                q: -qd / base_mva,
                essential: false,
                fuel_tag: "load".into(),
            });
        }
    }

    let mut generators = Vec::new();
    for (k, row) in gen_rows.iter().enumerate() {
        let bus = bus_id(row[0], gen_line, "generator bus")?;
        if row[7] <= 0.0 || isolated.contains(&bus) {
            continue;
        }
        generators.push(Component {
            id: format!("g{}", k + 1),
            kind: ComponentKind::Generator,
            bus,
            p: row[1] / base_mva,
            q: row[2] / base_mva,
            essential: false,
            fuel_tag: fuels.map(|f| f[k].clone()).unwrap_or_default(),
        });
    }

    let mut branches = Vec::new();
    for row in branch_rows {
        let from_bus = bus_id(row[0], branch_line, "branch from-bus")?;
        let to_bus = bus_id(row[1], branch_line, "branch to-bus")?;
        if row[10] <= 0.0 || isolated.contains(&from_bus) || isolated.contains(&to_bus) {
            continue;
        }
        branches.push(Branch {
            from_bus,
            to_bus,
            r: row[2],
            x: row[3],
            b_shunt: row[4],
            tap: if row[8] == 0.0 { 1.0 } else { row[8] },
            phase_shift: row[9].to_radians(),
            in_service: true,
        });
    }

    let mut remodeled = Vec::new();
    let gen_buses: HashSet<BusId> = generators.iter().map(|g| g.bus).collect();
    for b in buses.iter_mut() {
        if b.kind == BusKind::PV && !gen_buses.contains(&b.id) {
            b.kind = BusKind::PQ;
            remodeled.push(Remodel {
                bus: b.id,
                reason: RemodelReason::NoActiveGenerator,
                component: None,
            });
        }
    }

    let case = GridCase {
        name: name.to_string(),
        base_mva,
        buses,
        branches,
        generators,
        loads,
        remodeled,
    };
    check_case(&case)?;
    Ok(case)
}

fn num(v: f64) -> String {
    if v == f64::INFINITY {
        "Inf".into()
    } else if v == f64::NEG_INFINITY {
        "-Inf".into()
    } else {
        format!("{v}")
    }
}

/// Degree value that reads back as exactly `rad`, when one exists within a
/// few ulps of the plain conversion.
fn degrees(rad: f64) -> f64 {
    let d = rad.to_degrees();
    if !d.is_finite() || d.to_radians() == rad {
        return d;
    }
    let (mut up, mut down) = (d, d);
    for _ in 0..4 {
        up = up.next_up();
        down = down.next_down();
        if let Some(c) = [up, down].into_iter().find(|c| c.to_radians() == rad) {
            return c;
        }
    }
    d
}

/// Serializes a case back to MATPOWER text. Essential flags are not part of
/// the format and are not written.
pub fn write_matpower(case: &GridCase) -> String {
    let base = case.base_mva;
    let mut out = String::new();
    let fname: String = case
        .name
        .chars()
        .map(|c| if c.is_ascii_alphanumeric() { c } else { '_' })
        .collect();
    let fname = if fname.is_empty() {
        "mpc_case".into()
    } else {
        fname
    };
    let _ = writeln!(out, "function mpc = {fname}");
    let _ = writeln!(out, "mpc.version = '2';");
    let _ = writeln!(out, "mpc.baseMVA = {};", num(base));

    let mut demand: HashMap<BusId, (f64, f64)> = HashMap::new();
    for l in &case.loads {
        let e = demand.entry(l.bus).or_default();
        e.0 -= l.p * base;
        e.1 -= l.q * base;
    }

    let _ = writeln!(
        out,
        "%\tbus_i\ttype\tPd\tQd\tGs\tBs\tarea\tVm\tVa\tbaseKV\tzone\tVmax\tVmin"
    );
    let _ = writeln!(out, "mpc.bus = [");
    for b in &case.buses {
        let kind = match b.kind {
            BusKind::PQ => 1,
            BusKind::PV => 2,
            BusKind::Slack => 3,
        };
        let (pd, qd) = demand.get(&b.id).copied().unwrap_or_default();
        let _ = writeln!(
            out,
            "\t{}\t{}\t{}\t{}\t{}\t{}\t1\t{}\t{}\t0\t1\t{}\t{};",
            b.id,
            kind,
            num(pd),
            num(qd),
            num(b.gs * base),
            num(b.bs * base),
            num(b.v_setpoint),
            num(degrees(b.angle_setpoint)),
            num(b.v_max),
            num(b.v_min)
        );
    }
    let _ = writeln!(out, "];");

    let _ = writeln!(
        out,
        "%\tbus\tPg\tQg\tQmax\tQmin\tVg\tmBase\tstatus\tPmax\tPmin"
    );
    let _ = writeln!(out, "mpc.gen = [");
    for g in &case.generators {
        let vg = case.bus(g.bus).map(|b| b.v_setpoint).unwrap_or(1.0);
        let _ = writeln!(
            out,
            "\t{}\t{}\t{}\t9999\t-9999\t{}\t{}\t1\t9999\t0;",
            g.bus,
            num(g.p * base),
            num(g.q * base),
            num(vg),
            num(base)
        );
    }
    let _ = writeln!(out, "];");

    let _ = writeln!(
        out,
        "%\tfbus\ttbus\tr\tx\tb\trateA\trateB\trateC\tratio\tangle\tstatus\tangmin\tangmax"
    );
    let _ = writeln!(out, "mpc.branch = [");
    for br in case.branches.iter().filter(|b| b.in_service) {
        let _ = writeln!(
            out,
            "\t{}\t{}\t{}\t{}\t{}\t0\t0\t0\t{}\t{}\t1\t-360\t360;",
            br.from_bus,
            br.to_bus,
            num(br.r),
            num(br.x),
            num(br.b_shunt),
            num(br.tap),
            num(degrees(br.phase_shift))
        );
    }
    let _ = writeln!(out, "];");

    if case.generators.iter().any(|g| !g.fuel_tag.is_empty()) {
        let _ = writeln!(out, "mpc.genfuel = {{");
        for g in &case.generators {
            let _ = writeln!(out, "\t'{}';", g.fuel_tag);
        }
        let _ = writeln!(out, "}};");
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    const TWO_BUS: &str = "function mpc = case2
mpc.version = '2';
mpc.baseMVA = 100;
%% bus data
mpc.bus = [
	1	3	0	0	0	0	1	1	0	230	1	1.1	0.9;
	2	1	100	0	0	0	1	1	0	230	1	1.1	0.9;
];
mpc.gen = [
	1	0	0	300	-300	1	100	1	250	10;
];
mpc.branch = [
	1	2	0	0.1	0	250	250	250	0	0	1	-360	360;
];
";

    #[test]
    fn minimal_two_bus_case() {
        let case = parse_matpower(TWO_BUS, "case2").unwrap();
        assert_eq!(case.buses.len(), 2);
        assert_eq!(case.branches.len(), 1);
        assert_eq!(case.generators.len(), 1);
        assert_eq!(case.branches[0].tap, 1.0);
    }

    #[test]
    fn load_converted_to_per_unit_negative_injection() {
        let case = parse_matpower(TWO_BUS, "case2").unwrap();
        assert_eq!(case.loads.len(), 1);
        assert_eq!(case.loads[0].p, -1.0);
        assert_eq!(case.loads[0].id, "l2");
    }

    #[test]
    fn dangling_branch_is_topology_error() {
        let text = TWO_BUS.replace("\t1\t2\t0\t0.1", "\t1\t99\t0\t0.1");
        let err = parse_matpower(&text, "bad").unwrap_err();
        assert!(
            matches!(err, CaseError::Topology(ref m) if m.contains("99")),
            "{err}"
        );
    }

    #[test]
    fn missing_slack_is_topology_error() {
        let text = TWO_BUS.replace("\t1\t3\t0\t0", "\t1\t1\t0\t0");
        assert!(matches!(
            parse_matpower(&text, "bad"),
            Err(CaseError::Topology(_))
        ));
    }

    #[test]
    fn malformed_number_reports_line() {
        let text = TWO_BUS.replace("\t2\t1\t100", "\t2\t1\t1x0");
        match parse_matpower(&text, "bad").unwrap_err() {
            CaseError::Parse { line, .. } => assert_eq!(line, 7),
            e => panic!("unexpected {e}"),
        }
    }

    #[test]
    fn unterminated_matrix_reports_start_line() {
        let cut = TWO_BUS.rfind("];").unwrap();
        match parse_matpower(&TWO_BUS[..cut], "bad").unwrap_err() {
            CaseError::Parse { line, .. } => assert_eq!(line, 12),
            e => panic!("unexpected {e}"),
        }
    }

    #[test]
    fn missing_table_or_column_is_schema_error() {
        let no_branch = TWO_BUS.replace("mpc.branch", "mpc.lines");
        assert!(matches!(
            parse_matpower(&no_branch, "bad"),
            Err(CaseError::Schema(_))
        ));
        let short_gen = TWO_BUS.replace(
            "\t1\t0\t0\t300\t-300\t1\t100\t1\t250\t10;",
            "\t1\t0\t0\t300;",
        );
        assert!(matches!(
            parse_matpower(&short_gen, "bad"),
            Err(CaseError::Schema(_))
        ));
    }

    #[test]
    fn out_of_service_branch_dropped_and_genfuel_read() {
        let text = format!("{TWO_BUS}mpc.genfuel = {{\n\t'solar';\n}};\n").replace(
            "\t1\t2\t0\t0.1\t0\t250\t250\t250\t0\t0\t1\t-360\t360;",
            "\t1\t2\t0\t0.1\t0\t250\t250\t250\t0\t0\t1\t-360\t360;\n\t1\t2\t0\t0.2\t0\t250\t250\t250\t0\t0\t0\t-360\t360;",
        );
        let case = parse_matpower(&text, "c").unwrap();
        assert_eq!(case.branches.len(), 1);
        assert_eq!(case.generators[0].fuel_tag, "solar");
    }

    #[test]
    fn pv_without_generator_becomes_pq() {
        let text = TWO_BUS.replace("\t2\t1\t100", "\t2\t2\t100");
        let case = parse_matpower(&text, "c").unwrap();
        assert_eq!(case.bus(2).unwrap().kind, BusKind::PQ);
        assert_eq!(case.remodeled.len(), 1);
    }

    #[test]
    fn write_then_parse_round_trips() {
        let case = parse_matpower(TWO_BUS, "case2").unwrap();
        let again = parse_matpower(&write_matpower(&case), "case2").unwrap();
        assert_eq!(case, again);
    }
}
