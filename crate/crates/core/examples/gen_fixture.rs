//! Writes the bundled desk-scale fixtures: the ranked corpus CSV and the
//! offline zone list (run once from the repo root:
//! `cargo run -p dgalab-core --example gen_fixture --release`).

use std::io::Write;

fn main() {
    let rows = dgalab_core::synth::synthetic_benign_fqdns(50_000, 0xDE5C);
    std::fs::create_dir_all("data").unwrap();

    let mut csv = std::io::BufWriter::new(std::fs::File::create("data/desk_corpus.csv").unwrap());
    for (rank, fqdn) in &rows {
        writeln!(csv, "{rank},{fqdn}").unwrap();
    }

    // The offline zone list plays the registered internet: every corpus
    // name exists.
    let mut zones =
        std::io::BufWriter::new(std::fs::File::create("data/desk_zones.txt").unwrap());
    writeln!(zones, "# desk-scale zone list: names that exist in offline probes").unwrap();
    for (_, fqdn) in &rows {
        writeln!(zones, "{fqdn}").unwrap();
    }
    println!("wrote data/desk_corpus.csv and data/desk_zones.txt");
}
