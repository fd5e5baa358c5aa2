fn main() {
    std::process::exit(discounted_mpc_cli::run(std::env::args_os()));
}
