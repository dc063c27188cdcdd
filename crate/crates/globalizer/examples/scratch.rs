fn main() {
    let p = std::env::args().nth(1).unwrap();
    let src = std::fs::read_to_string(p).unwrap();
    match nsc_globalizer::globalize_source(&src, &Default::default()) {
        Ok(t) => { print!("{}", t.source); print!("----\n{}", t.report); }
        Err(e) => println!("ERR {e}"),
    }
}
