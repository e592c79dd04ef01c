from cop.cli import main

main()
