fn main() {
    std::process::exit(mbprei::harness::run(std::env::args_os()));
}
