fn main() {
    std::process::exit(treepop::cli::run(std::env::args_os()));
}
