fn main() {
    std::process::exit(ptmst::cli::main_with(std::env::args_os()));
}
