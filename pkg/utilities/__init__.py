# utilities package
