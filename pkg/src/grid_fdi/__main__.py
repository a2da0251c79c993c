from grid_fdi import main

if __name__ == "__main__":
    main()
