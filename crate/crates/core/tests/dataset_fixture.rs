//! Committed dataset fixture: parses with stable order and round-trips
//! through the canonical writer.

use vidrl::jsonl;
use vidrl::pipeline::Sample;
use vidrl::rewards::TaskKind;

const FIXTURE: &str = include_str!("fixtures/samples_three.jsonl");

#[test]
fn three_record_fixture_parses_in_order() {
    let samples: Vec<Sample> = jsonl::read_records(FIXTURE.as_bytes()).unwrap();
    assert_eq!(samples.len(), 3);
    assert_eq!(samples[0].sample_id, "ds-001");
    assert_eq!(samples[1].sample_id, "ds-002");
    assert_eq!(samples[2].sample_id, "ds-003");
    assert_eq!(samples[0].task, TaskKind::TemporalGrounding);
    assert_eq!(samples[1].task, TaskKind::GroundedVqaOpen);
    assert_eq!(samples[2].task, TaskKind::VqaNumber);
    assert_eq!(samples[1].ground_truth.time_range.unwrap().start, 91.0);
}

#[test]
fn fixture_write_read_is_identity() {
    let samples: Vec<Sample> = jsonl::read_records(FIXTURE.as_bytes()).unwrap();
    let mut buf = Vec::new();
    jsonl::write_records(&mut buf, &samples).unwrap();
    let back: Vec<Sample> = jsonl::read_records(buf.as_slice()).unwrap();
    assert_eq!(back, samples);
}
