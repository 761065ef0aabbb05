# Data models package 