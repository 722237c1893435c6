fn main() {
    eprintln!("pipeline commands are not wired up yet");
    std::process::exit(1);
}
