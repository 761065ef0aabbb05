# Command handlers package
