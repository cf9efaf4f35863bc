//! Writes the synthetic 118-bus case bundled as `cases/synth118.m`.
//!
//! The network is a ring with short chords from every other bus and long
//! chords from every fifth, twenty PV plants, loads on most PQ buses, and
//! solar and wind units on load buses. All values come from a fixed-seed
//! generator; the bus table then carries the solved voltages (PQ magnitudes
//! on a 0.01 pu schedule), as MATPOWER cases usually do. The output is reproducible:
//!
//! ```text
//! cargo run -p rmss-core --example synth_case > crates/core/cases/synth118.m
//! ```

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rmss_core::grid::parse_matpower;
use rmss_core::{solve_power_flow, SolveOptions};

const N: usize = 118;

struct BusRow {
    id: usize,
    kind: u8,
    pd: f64,
    qd: f64,
    vm: f64,
    va: f64,
}

fn render(buses: &[BusRow], gens: &str, branches: &str, fuels: &[&str]) -> String {
    let mut out = String::new();
    out.push_str("function mpc = synth118\n");
    out.push_str("% Synthetic 118-bus network for sensitivity and sweep testing. Generated\n");
    out.push_str("% by crates/core/examples/synth_case.rs (seed 118); do not edit by hand.\n\n");
    out.push_str("mpc.version = '2';\nmpc.baseMVA = 100;\n\n");
    out.push_str(
        "%\tbus_i\ttype\tPd\tQd\tGs\tBs\tarea\tVm\tVa\tbaseKV\tzone\tVmax\tVmin\nmpc.bus = [\n",
    );
    for b in buses {
        out.push_str(&format!(
            "\t{}\t{}\t{}\t{}\t0\t0\t1\t{}\t{}\t138\t1\t1.06\t0.94;\n",
            b.id, b.kind, b.pd, b.qd, b.vm, b.va
        ));
    }
    out.push_str("];\n\n");
    out.push_str("%\tbus\tPg\tQg\tQmax\tQmin\tVg\tmBase\tstatus\tPmax\tPmin\nmpc.gen = [\n");
    out.push_str(gens);
    out.push_str("];\n\n");
    out.push_str("%\tfbus\ttbus\tr\tx\tb\trateA\trateB\trateC\tratio\tangle\tstatus\tangmin\tangmax\nmpc.branch = [\n");
    out.push_str(branches);
    out.push_str("];\n\nmpc.genfuel = {\n");
    for f in fuels {
        out.push_str(&format!("\t'{f}';\n"));
    }
    out.push_str("};\n");
    out
}

fn main() {
    let mut rng = ChaCha8Rng::seed_from_u64(118);
    let pv: Vec<usize> = (0..20).map(|k| 4 + 6 * k).collect();
    let solar: Vec<usize> = (0..16)
        .map(|k| 7 + 7 * k)
        .filter(|b| !pv.contains(b))
        .collect();
    let wind: Vec<usize> = (0..10)
        .map(|k| 10 + 11 * k)
        .filter(|b| !pv.contains(b) && !solar.contains(b))
        .collect();

    let mut buses = Vec::with_capacity(N);
    for id in 1..=N {
        let kind = if id == 1 {
            3
        } else if pv.contains(&id) {
            2
        } else {
            1
        };
        let (pd, qd) = if id == 1 || id % 5 == 0 {
            (0.0, 0.0)
        } else {
            let p: f64 = rng.random_range(10.0..30.0);
            (round(p, 1), round(p * rng.random_range(0.2..0.4), 1))
        };
        let vm = if kind == 1 {
            1.0
        } else {
            round(rng.random_range(1.0..1.04), 3)
        };
        buses.push(BusRow {
            id,
            kind,
            pd,
            qd,
            vm,
            va: 0.0,
        });
    }

    let mut gens = String::new();
    let mut fuels = Vec::new();
    gens.push_str("\t1\t0\t0\t300\t-300\t1.02\t100\t1\t600\t0;\n");
    fuels.push("coal");
    for &b in &pv {
        let p = round(rng.random_range(30.0..70.0), 1);
        gens.push_str(&format!("\t{b}\t{p}\t0\t150\t-150\t1\t100\t1\t200\t0;\n"));
        fuels.push(if b % 4 == 0 { "ng" } else { "coal" });
    }
    for (list, fuel, lo, hi) in [(&solar, "solar", 10.0, 30.0), (&wind, "wind", 15.0, 40.0)] {
        for &b in list {
            let p = round(rng.random_range(lo..hi), 1);
            gens.push_str(&format!("\t{b}\t{p}\t0\t0\t0\t1\t100\t1\t{hi}\t0;\n"));
            fuels.push(fuel);
        }
    }

    let mut branches = String::new();
    let mut edges: Vec<(usize, usize)> = (1..=N).map(|b| (b, b % N + 1)).collect();
    edges.extend((1..=N).step_by(2).map(|b| (b, (b + 7 - 1) % N + 1)));
    edges.extend((2..=N).step_by(5).map(|b| (b, (b + 40 - 1) % N + 1)));
    for (f, t) in edges {
        let r = round(rng.random_range(0.004..0.02), 4);
        let x = round(rng.random_range(0.03..0.09), 4);
        let b = round(rng.random_range(0.0..0.04), 3);
        branches.push_str(&format!(
            "\t{f}\t{t}\t{r}\t{x}\t{b}\t0\t0\t0\t0\t0\t1\t-360\t360;\n"
        ));
    }

    // solve once and store the operating point in the bus table, with PQ
    // magnitudes rounded to a 0.01 pu voltage schedule
    let draft = render(&buses, &gens, &branches, &fuels);
    let case = parse_matpower(&draft, "synth118").expect("generated case parses");
    let sol = solve_power_flow(&case, &SolveOptions::default()).expect("generated case solves");
    for (row, v) in buses.iter_mut().zip(&sol.v) {
        row.vm = round(v.norm(), if row.kind == 1 { 2 } else { 4 });
        row.va = round(v.arg().to_degrees(), 3);
    }
    print!("{}", render(&buses, &gens, &branches, &fuels));
}

fn round(v: f64, digits: i32) -> f64 {
    let s = 10f64.powi(digits);
    (v * s).round() / s
}
