import { Viewer } from "./viewer.js";

const params = new URLSearchParams(window.location.search);
const baseUrl = params.get("service") ?? "http://127.0.0.1:8707";

const img = document.getElementById("frame") as HTMLImageElement;
const overlay = document.getElementById("overlay") as HTMLElement;
const banner = document.getElementById("banner") as HTMLElement;

void new Viewer({ baseUrl }, img, overlay, banner).start();
