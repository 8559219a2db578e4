// const fs = require("fs");
/* eval("bad");
   fetch("http://example.com");
*/
const ok = 1; // process.exit()
module.exports = ok;
