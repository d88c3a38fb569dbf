fn main() {
    std::process::exit(trajgraph::cli::run(std::env::args_os()) as i32);
}
