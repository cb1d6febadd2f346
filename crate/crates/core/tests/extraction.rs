use tsc_core::language::{extract_phase, parse_fixture};
use tsc_core::sim::{build_topology, Preset, TopologyConfig};

const CORPUS: &str = include_str!("fixtures/extraction.tsv");

#[test]
fn corpus_agrees_everywhere() {
    let topo = build_topology(&TopologyConfig::preset(Preset::Toy8)).unwrap();
    let cases = parse_fixture(CORPUS).unwrap();
    assert!(cases.len() >= 20);
    let failures: Vec<String> = cases
        .iter()
        .filter_map(|c| {
            let got = &topo.phases[extract_phase(&c.input, &topo.phases, 0)].mnemonic;
            (got != &c.expected).then(|| format!("line {}: {:?} -> {got}, want {}", c.line, c.input, c.expected))
        })
        .collect();
    assert!(failures.is_empty(), "{failures:#?}");
}

#[test]
fn corpus_covers_the_tagged_example() {
    let cases = parse_fixture(CORPUS).unwrap();
    assert!(cases
        .iter()
        .any(|c| c.input == "<signal>ETEL</signal>" && c.expected == "ETEL"));
    assert!(cases.iter().any(|c| c.input.is_empty()));
}

#[test]
fn malformed_corpus_line_is_reported() {
    let err = parse_fixture("# header\nno tab here\n").unwrap_err();
    assert!(err.to_string().contains('2'), "{err}");
}
