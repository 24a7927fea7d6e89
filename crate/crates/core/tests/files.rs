use std::fs::File;
use std::io::{BufReader, Write};

use ppdns_core::store::{read_trace, write_trace, IngestOptions, TraceRecord};
use ppdns_core::{hash_name, NameStore};

#[test]
fn snapshot_survives_a_file() {
    let dir = tempfile::tempdir().unwrap();
    let names = dir.path().join("names.txt");
    let mut f = File::create(&names).unwrap();
    writeln!(f, "www.example.com\nMAIL.example.com.\n\nwww.example.com\nbad..name").unwrap();
    drop(f);
    let (store, report) = NameStore::ingest_names(BufReader::new(File::open(&names).unwrap()), &IngestOptions::default()).unwrap();
    assert_eq!((report.lines, report.distinct, report.duplicates, report.skipped), (4, 2, 1, 1));

    let snapshot = dir.path().join("store.db");
    store.write_snapshot(File::create(&snapshot).unwrap()).unwrap();
    let back = NameStore::read_snapshot(BufReader::new(File::open(&snapshot).unwrap())).unwrap();
    assert_eq!(back, store);
    assert!(back.get(hash_name("mail.example.com").unwrap()).is_some());
}

#[test]
fn trace_survives_a_file_and_sets_ttls() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("trace.csv");
    let records = vec![
        TraceRecord { timestamp_seconds: 0.5, name: "a.example".into(), ttl_seconds: 30, response_bytes: 80 },
        TraceRecord { timestamp_seconds: 1.0, name: "b.example".into(), ttl_seconds: 86_400, response_bytes: 120 },
    ];
    write_trace(File::create(&path).unwrap(), &records).unwrap();
    let back = read_trace(File::open(&path).unwrap()).unwrap();
    assert_eq!(back, records);

    let options = IngestOptions { ttl_overrides: ppdns_core::store::trace_ttls(&back), ..IngestOptions::default() };
    let (store, _) = NameStore::ingest_names("a.example\nb.example\nc.example\n".as_bytes(), &options).unwrap();
    let ttl = |n: &str| store.get(hash_name(n).unwrap()).unwrap().min_ttl();
    assert_eq!((ttl("a.example"), ttl("b.example"), ttl("c.example")), (Some(30), Some(86_400), Some(3600)));
}

#[test]
fn unordered_trace_is_rejected() {
    let text = "timestamp_seconds,name,ttl_seconds,response_bytes\n2.0,a.example,60,80\n1.0,b.example,60,80\n";
    assert!(read_trace(text.as_bytes()).is_err());
}
