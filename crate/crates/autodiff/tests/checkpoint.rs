use std::fs::File;
use std::io::{BufReader, BufWriter};

use hsurf_autodiff::checkpoint::{read_checkpoint, write_checkpoint, Record};
use hsurf_autodiff::{AdamConfig, Mat, ParameterSet, Tape};
use ndarray::array;
use proptest::prelude::*;

fn quadratic_step(p: &mut ParameterSet) {
    let tape = Tape::new();
    let w = p.var(&tape, 0).unwrap();
    let target = tape.constant(array![[1.0, -2.0, 0.5]]).unwrap();
    let loss = w.sub(target).unwrap().square().unwrap().sum().unwrap();
    p.accumulate(&tape.backward(loss).unwrap()).unwrap();
    p.adam_step(0.05, &AdamConfig::default()).unwrap();
}

fn fresh() -> ParameterSet {
    let mut p = ParameterSet::new("w");
    p.add("w", array![[0.0, 0.0, 0.0]]).unwrap();
    p
}

#[test]
fn resuming_from_a_file_continues_bit_identically() {
    let mut straight = fresh();
    for _ in 0..6 {
        quadratic_step(&mut straight);
    }

    let mut first = fresh();
    for _ in 0..3 {
        quadratic_step(&mut first);
    }
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("w.hsrf");
    write_checkpoint(BufWriter::new(File::create(&path).unwrap()), "arch=none", &first.to_records("")).unwrap();

    let (header, records) = read_checkpoint(BufReader::new(File::open(&path).unwrap())).unwrap();
    assert_eq!(header, "arch=none");
    let mut resumed = fresh();
    resumed.load_records("", &records).unwrap();
    for _ in 0..3 {
        quadratic_step(&mut resumed);
    }
    assert_eq!(resumed.value(0), straight.value(0));
    assert_eq!(resumed.moments(0), straight.moments(0));
    assert_eq!(resumed.step(), 6);
}

#[test]
fn loading_checks_names_and_shapes() {
    let records = fresh().to_records("a/");
    let mut p = fresh();
    assert!(p.load_records("b/", &records).is_err());
    let mut wide = ParameterSet::new("w");
    wide.add("w", Mat::zeros((1, 4))).unwrap();
    assert!(wide.load_records("a/", &records).is_err());
}

proptest! {
    #[test]
    fn records_round_trip_bitwise(
        rows in 1usize..5,
        cols in 1usize..5,
        seed in prop::collection::vec(-1e6f64..1e6, 16),
        header in "[a-z=\n0-9]{0,40}",
    ) {
        let m = Mat::from_shape_fn((rows, cols), |(i, j)| seed[(i * cols + j) % 16]);
        let recs = vec![Record::from_mat("x", &m), Record { name: "s".into(), dims: vec![], data: vec![3.0] }];
        let mut buf = Vec::new();
        write_checkpoint(&mut buf, &header, &recs).unwrap();
        let (h, back) = read_checkpoint(&buf[..]).unwrap();
        prop_assert_eq!(h, header);
        prop_assert_eq!(&back, &recs);
        prop_assert_eq!(back[0].to_mat().unwrap(), m);
    }
}
