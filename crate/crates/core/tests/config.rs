use flowlab::config::*;

#[test]
fn parse_and_print() {
    let kv = KeyValues::parse("# header\nsteps = 10\n\nlr=1e-3 # trailing\n").unwrap();
    assert_eq!(kv.get::<usize>("steps").unwrap(), Some(10));
    assert_eq!(kv.get::<f64>("lr").unwrap(), Some(1e-3));
    assert_eq!(kv.to_string(), "lr = 1e-3\nsteps = 10\n");
    assert_eq!(KeyValues::parse(&kv.to_string()).unwrap(), kv);
}

#[test]
fn errors() {
    assert!(KeyValues::parse("novalue").is_err());
    let kv = KeyValues::parse("steps = ten").unwrap();
    assert!(kv.get::<usize>("steps").is_err());
    assert!(kv.reject_unknown(&["lr"]).is_err());
}
