fn main() {
    // CLI wiring lands with the experiment module.
    eprintln!("not yet wired");
    std::process::exit(2);
}
