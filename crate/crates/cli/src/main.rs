fn main() {
    std::process::exit(rmps_lab_cli::run(std::env::args_os()));
}
