import { mountConsole } from "./ui.js";

const root = document.querySelector<HTMLElement>("#app");
if (!root) throw new Error("missing #app mount point");
mountConsole(root);
