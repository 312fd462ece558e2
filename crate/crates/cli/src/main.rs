fn main() {
    std::process::exit(blockdetail_cli::commands::run(std::env::args_os()));
}
